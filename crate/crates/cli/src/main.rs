fn main() {
    std::process::exit(sgflow_cli::app::main_with_args(std::env::args_os()));
}
