fn main() {
    std::process::exit(sightcast::cli::main_with_args(std::env::args_os()));
}
