fn main() {
    std::process::exit(melstyle::cli::run(std::env::args_os()));
}
