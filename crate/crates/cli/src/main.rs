fn main() {
    std::process::exit(lvd_cli::main_with_args(std::env::args_os()));
}
