fn main() {
    std::process::exit(latrec::cli::main_with_args(std::env::args_os()));
}
