use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::pde::{GridSpec, Payoff};
use super::{solve_pricing_pde, PricingError};
use crate::implicit_volatility::VolatilityField;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptionType {
    Call,
    Put,
}

/// One quoted European option; one CSV row `type,K,T,price,weight`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketQuote {
    #[serde(rename = "type")]
    pub option_type: OptionType,
    #[serde(rename = "K")]
    pub strike: f64,
    #[serde(rename = "T")]
    pub maturity: f64,
    pub price: f64,
    pub weight: f64,
}

impl MarketQuote {
    pub fn payoff(&self) -> Payoff {
        match self.option_type {
            OptionType::Call => Payoff::Call { strike: self.strike },
            OptionType::Put => Payoff::Put { strike: self.strike },
        }
    }

    /// Field checks plus the static no-arbitrage bounds given `(S0, r)`.
    pub fn validate(&self, s0: f64, r: f64) -> Result<(), PricingError> {
        let mut problems = Vec::new();
        if !(self.strike > 0.0 && self.strike.is_finite()) {
            problems.push(format!("K must be positive, got {}", self.strike));
        }
        if !(self.maturity > 0.0 && self.maturity.is_finite()) {
            problems.push(format!("T must be positive, got {}", self.maturity));
        }
        if !(self.price > 0.0 && self.price.is_finite()) {
            problems.push(format!("price must be positive, got {}", self.price));
        }
        if !(self.weight >= 0.0 && self.weight.is_finite()) {
            problems.push(format!("weight must be >= 0, got {}", self.weight));
        }
        if problems.is_empty() {
            let pv_k = self.strike * (-r * self.maturity).exp();
            let (lo, hi) = match self.option_type {
                OptionType::Call => ((s0 - pv_k).max(0.0), s0),
                OptionType::Put => ((pv_k - s0).max(0.0), pv_k),
            };
            let slack = 1e-12 * s0.max(self.strike);
            if self.price < lo - slack || self.price > hi + slack {
                problems.push(format!(
                    "price {} outside no-arbitrage bounds [{lo}, {hi}] for {:?} K = {} T = {}",
                    self.price, self.option_type, self.strike, self.maturity
                ));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(PricingError::Precondition(problems.join("; ")))
        }
    }
}

pub fn read_quotes<R: Read>(r: R) -> Result<Vec<MarketQuote>, PricingError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

pub fn write_quotes<W: Write>(w: W, quotes: &[MarketQuote]) -> Result<(), PricingError> {
    let mut wtr = csv::Writer::from_writer(w);
    for q in quotes {
        wtr.serialize(q)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Grid resolution used for every quote.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuoteGrid {
    pub n_s: usize,
    pub n_t: usize,
}

impl Default for QuoteGrid {
    fn default() -> Self {
        QuoteGrid { n_s: 200, n_t: 100 }
    }
}

/// Model price at `(0, S0)` for each quote, one PDE solve per quote run in
/// parallel.
pub fn price_quotes(
    vf: &VolatilityField,
    quotes: &[MarketQuote],
    s0: f64,
    r: f64,
    grid: QuoteGrid,
) -> Result<Vec<f64>, PricingError> {
    if !(s0 > 0.0 && s0.is_finite()) {
        return Err(PricingError::Domain(format!("S0 must be positive, got {s0}")));
    }
    let out: Vec<Result<f64, PricingError>> = quotes
        .par_iter()
        .map(|q| {
            let spec = GridSpec::for_quote(s0, q.strike, q.maturity, grid.n_s, grid.n_t);
            solve_pricing_pde(vf, q.payoff(), r, &spec)?.spot_value(s0)
        })
        .collect();
    out.into_iter().collect()
}

/// Index pairs `(i, j)` of same-maturity calls with `K_i < K_j` but a
/// lower price at `i`.
pub fn call_crossings(quotes: &[MarketQuote], prices: &[f64]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..quotes.len() {
        for j in 0..quotes.len() {
            let (a, b) = (&quotes[i], &quotes[j]);
            if a.option_type == OptionType::Call
                && b.option_type == OptionType::Call
                && a.maturity == b.maturity
                && a.strike < b.strike
                && prices[i] < prices[j]
            {
                out.push((i, j));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let text = "type,K,T,price,weight\ncall,100,1,10.45,1\nput, 90 ,0.5,1.2,0.5\n";
        let q = read_quotes(text.as_bytes()).unwrap();
        assert_eq!(q.len(), 2);
        assert_eq!(q[1].option_type, OptionType::Put);
        assert_eq!(q[1].strike, 90.0);
        let mut buf = Vec::new();
        write_quotes(&mut buf, &q).unwrap();
        assert_eq!(read_quotes(buf.as_slice()).unwrap(), q);
    }

    #[test]
    fn arbitrage_bounds() {
        let q = |option_type, price| MarketQuote { option_type, strike: 100.0, maturity: 1.0, price, weight: 1.0 };
        assert!(q(OptionType::Call, 10.0).validate(100.0, 0.05).is_ok());
        assert!(q(OptionType::Call, 4.0).validate(100.0, 0.05).is_err());
        assert!(q(OptionType::Call, 101.0).validate(100.0, 0.05).is_err());
        assert!(q(OptionType::Put, 96.0).validate(100.0, 0.05).is_err());
        let bad = MarketQuote { strike: -1.0, maturity: 0.0, ..q(OptionType::Put, 1.0) };
        match bad.validate(100.0, 0.0) {
            Err(PricingError::Precondition(m)) => assert!(m.contains("K must") && m.contains("T must")),
            other => panic!("unexpected {other:?}"),
        }
    }
}
