fn main() {
    std::process::exit(mixcontext::cli::main_with_args(std::env::args_os()));
}
