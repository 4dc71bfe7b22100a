fn main() {
    std::process::exit(fedgen::cli::main_with_args(std::env::args_os()));
}
