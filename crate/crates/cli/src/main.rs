fn main() {
    std::process::exit(pantcr_cli::main_with_args(std::env::args_os()));
}
