fn main() {
    std::process::exit(latticescale::cli::main_with_args(std::env::args_os()));
}
