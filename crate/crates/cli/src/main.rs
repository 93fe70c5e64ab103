fn main() {
    let status = setloss_cli::run(std::env::args().skip(1).collect());
    std::process::exit(status as i32);
}
