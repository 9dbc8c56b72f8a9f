fn main() {
    std::process::exit(quadflux::cli::main_with_args(std::env::args_os()));
}
