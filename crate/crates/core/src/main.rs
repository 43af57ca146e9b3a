fn main() -> std::process::ExitCode {
    nfmimo::cli::run(std::env::args_os())
}
