fn main() {
    std::process::exit(mie::cli::run(std::env::args_os()));
}
