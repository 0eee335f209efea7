fn main() {
    std::process::exit(llgm::cli::run(std::env::args_os()));
}
