fn main() {
    std::process::exit(newtonlab::cli::main_with_args(std::env::args_os()));
}
