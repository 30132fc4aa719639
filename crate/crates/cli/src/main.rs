fn main() -> std::process::ExitCode {
    smartfridge_cli::main_with_args(std::env::args_os())
}
