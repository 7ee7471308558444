use clap::Parser;
use precession::cli::{prepare, run, Args};

fn main() {
    let args = Args::parse();
    let result = prepare(&args).and_then(|(config, out)| run(args.command, &config, &out));
    match result {
        Ok(outcome) => println!("{}", outcome.summary),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
