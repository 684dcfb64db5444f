use kare_core::datagen::read_pairs;
use kare_core::diff::{align, mask_dump, MaskDump};
use kare_core::knowledge::parse_repr;
use kare_core::{Format, Tokenizer};
use serde::Serialize;

use crate::args::{DiffPairArgs, ParseKgArgs, TokenizerArg};
use crate::error::{io_at, CliError};

pub fn cmd_parse_kg(args: ParseKgArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.path).map_err(io_at(&args.path))?;
    let parsed = parse_repr(Format::from(args.format), &text)?;
    for w in &parsed.warnings {
        if w.line == 0 {
            eprintln!("warning: {}", w.message);
        } else {
            eprintln!("warning: line {}: {}", w.line, w.message);
        }
    }
    if args.json {
        println!("{}", serde_json::to_string_pretty(&parsed.value)?);
    } else {
        println!("{}", parsed.value.to_text());
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct PairDiff {
    id: String,
    lcs_len: usize,
    chosen: MaskDump,
    rejected: MaskDump,
}

pub fn cmd_diff_pair(args: DiffPairArgs) -> Result<(), CliError> {
    let f = std::fs::File::open(&args.pairs).map_err(io_at(&args.pairs))?;
    let pairs = read_pairs(std::io::BufReader::new(f))?;
    let pair = pairs.iter().find(|p| p.id == args.pair_id).ok_or_else(|| {
        CliError::data(
            "MissingId",
            format!("no pair `{}` in {}", args.pair_id, args.pairs.display()),
        )
    })?;
    let gamma = args.gamma.unwrap_or(kare_core::DdpoConfig::default().gamma);
    let tok = match args.tokenizer {
        TokenizerArg::Whitespace => Tokenizer::whitespace(),
        TokenizerArg::Byte => Tokenizer::byte(),
    };
    let chosen = tok.tokenize(&pair.chosen)?;
    let rejected = tok.tokenize(&pair.rejected)?;
    let d = align(&chosen, &rejected)?;
    let out = PairDiff {
        id: pair.id.clone(),
        lcs_len: d.lcs_len(),
        chosen: mask_dump(&tok, &chosen, &d.chosen_mask.with_gamma(gamma))?,
        rejected: mask_dump(&tok, &rejected, &d.rejected_mask.with_gamma(gamma))?,
    };
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}
