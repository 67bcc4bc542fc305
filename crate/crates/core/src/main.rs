fn main() {
    std::process::exit(fracbump::cli::run(std::env::args_os()));
}
