fn main() {
    std::process::exit(gridprice::cli::run_cli(std::env::args_os()));
}
