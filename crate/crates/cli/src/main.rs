fn main() {
    std::process::exit(ppscert_cli::run(std::env::args_os()));
}
