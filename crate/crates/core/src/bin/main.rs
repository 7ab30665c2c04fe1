fn main() {
    std::process::exit(unitarize::cli::main_with(std::env::args_os()));
}
