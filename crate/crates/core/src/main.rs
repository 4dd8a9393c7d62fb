fn main() {
    std::process::exit(rpelab::cli::main_with(std::env::args_os()));
}
