fn main() {
    std::process::exit(qirt::cli::run(std::env::args_os()));
}
