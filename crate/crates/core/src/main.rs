fn main() {
    std::process::exit(datalyap::cli::run(std::env::args_os()));
}
