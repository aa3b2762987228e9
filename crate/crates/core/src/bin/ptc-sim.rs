use clap::Parser;
use pseudotransient::cli::{main_with, Cli, EXIT_INPUT};

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            std::process::exit(if e.use_stderr() { EXIT_INPUT } else { 0 });
        }
    };
    let (text, code) = main_with(&cli);
    if code == EXIT_INPUT {
        eprint!("{text}");
    } else {
        print!("{text}");
    }
    std::process::exit(code);
}
