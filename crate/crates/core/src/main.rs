fn main() {
    std::process::exit(varsym::cli::main_with_args(std::env::args_os()));
}
