fn main() -> std::process::ExitCode {
    plastreg::cli::main_with_args(std::env::args_os())
}
