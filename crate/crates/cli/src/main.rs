fn main() {
    std::process::exit(agentkit_cli::run(std::env::args_os()));
}
