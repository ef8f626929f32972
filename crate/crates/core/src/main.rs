fn main() {
    std::process::exit(hivt5::cli::run(std::env::args_os()));
}
