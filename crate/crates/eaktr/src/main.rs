fn main() {
    std::process::exit(eaktr::cli::run(std::env::args_os()));
}
