fn main() {
    std::process::exit(peftlab::cli::main_with_args(std::env::args_os()));
}
