fn main() {
    std::process::exit(ncam_cli::main_with_args(std::env::args_os()));
}
