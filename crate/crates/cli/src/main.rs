fn main() -> std::process::ExitCode {
    ratnet_cli::main_with_args(std::env::args_os())
}
