fn main() {
    std::process::exit(topoloc::cli::main_exit_code());
}
