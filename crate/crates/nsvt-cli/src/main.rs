fn main() {
    env_logger::init();
    std::process::exit(nsvt_cli_run());
}

fn nsvt_cli_run() -> i32 {
    0
}
