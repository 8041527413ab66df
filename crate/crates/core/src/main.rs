fn main() {
    std::process::exit(matrixrl::cli::main_with_args(std::env::args_os()));
}
