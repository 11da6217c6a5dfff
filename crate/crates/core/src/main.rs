fn main() {
    std::process::exit(hexqa::cli::main_with_args(std::env::args_os()));
}
