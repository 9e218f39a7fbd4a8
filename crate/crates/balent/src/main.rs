use balent::cli;

fn main() {
    std::process::exit(cli::run());
}
