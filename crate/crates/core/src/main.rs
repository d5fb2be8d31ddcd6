fn main() {
    std::process::exit(hencky::cli::run(std::env::args_os()));
}
