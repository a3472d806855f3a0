fn main() {
    std::process::exit(keypose::cli::run(std::env::args_os()));
}
