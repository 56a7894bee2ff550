fn main() {
    std::process::exit(hard_rods::cli::run(std::env::args_os()));
}
