//! Reference external backend: multiplies every patch by a constant gain.
//!
//! Speaks the framed stdin/stdout patch protocol. `--gain 1` is an echo
//! server. `--fault` makes it misbehave on the `--fault-at`-th patch
//! (0-based), for exercising host error paths.

use std::io::{self, BufReader, BufWriter};
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use vmstain_core::io::{decode_png, encode_png};
use vmstain_core::protocol::{read_frame, serve, write_frame};
use vmstain_core::PlanarImage;

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Fault {
    None,
    /// Answer with a patch one row taller.
    Resize,
    /// Answer with a frame that is not a PNG.
    Garbage,
    /// Announce a frame and exit before finishing it.
    Truncate,
}

#[derive(Parser)]
#[command(name = "vmstain-gain-backend")]
struct Args {
    #[arg(long, default_value_t = 1.0)]
    gain: f64,
    #[arg(long, value_enum, default_value_t = Fault::None)]
    fault: Fault,
    #[arg(long, default_value_t = 0)]
    fault_at: usize,
}

fn scale(img: &PlanarImage, gain: f64) -> PlanarImage {
    img.map_pixels(|px| px.map(|v| v * gain))
}

fn faulty(args: &Args) -> io::Result<()> {
    let mut r = BufReader::new(io::stdin().lock());
    let mut w = BufWriter::new(io::stdout().lock());
    let bad = |e: vmstain_core::Error| io::Error::new(io::ErrorKind::InvalidData, e.to_string());
    let Some(hello) = read_frame(&mut r, usize::MAX)? else { return Ok(()) };
    write_frame(&mut w, &hello)?;
    let mut index = 0;
    while let Some(frame) = read_frame(&mut r, usize::MAX)? {
        let img = decode_png(&frame).map_err(bad)?;
        if index == args.fault_at {
            match args.fault {
                Fault::Resize => {
                    let taller = PlanarImage::zeros(img.height() + 1, img.width());
                    write_frame(&mut w, &encode_png(&taller).map_err(bad)?)?;
                }
                Fault::Garbage => write_frame(&mut w, b"definitely not a png")?,
                Fault::Truncate => {
                    use std::io::Write;
                    w.write_all(&1000u32.to_be_bytes())?;
                    w.write_all(b"short")?;
                    w.flush()?;
                    return Ok(());
                }
                Fault::None => unreachable!(),
            }
        } else {
            write_frame(&mut w, &encode_png(&scale(&img, args.gain)).map_err(bad)?)?;
        }
        index += 1;
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    let result = if args.fault == Fault::None {
        let gain = args.gain;
        serve(io::stdin().lock(), io::stdout().lock(), |img| Ok(scale(&img, gain))).map_err(|e| e.to_string())
    } else {
        faulty(&args).map_err(|e| e.to_string())
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("vmstain-gain-backend: {e}");
            ExitCode::FAILURE
        }
    }
}
