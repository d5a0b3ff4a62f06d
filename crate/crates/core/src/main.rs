fn main() {
    std::process::exit(skelxai::cli::run(std::env::args_os()));
}
