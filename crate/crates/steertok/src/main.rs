fn main() {
    std::process::exit(steertok::cli::main_with_args(std::env::args_os()));
}
