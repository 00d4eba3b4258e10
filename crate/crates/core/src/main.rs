fn main() {
    std::process::exit(limbrec::cli::run(std::env::args_os()));
}
