fn main() {
    std::process::exit(sapcovid::cli::run(std::env::args_os()));
}
