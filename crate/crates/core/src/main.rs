fn main() {
    std::process::exit(dsdenoise::cli::run(std::env::args_os()));
}
