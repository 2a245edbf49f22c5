//! A seeded generator of JavaScript-flavoured source text, used as a
//! stand-in training corpus when no real one is supplied.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const NAMES: &[&str] = &[
    "tensor", "shape", "dtype", "values", "backend", "kernel", "grad", "input", "output", "axis", "size", "rank",
    "strides", "buffer", "result", "index", "offset", "scale", "bias", "weights",
];
const FUNCS: &[&str] = &[
    "reshape", "matMul", "add", "sub", "mul", "div", "exp", "log", "sum", "mean", "relu", "sigmoid", "tanh",
    "concat", "slice", "transpose", "assertShapesMatch", "computeStrides", "sizeFromShape", "disposeVariables",
];
const TYPES: &[&str] = &["Tensor", "Variable", "TensorBuffer", "Scalar", "Tensor1D", "Tensor2D"];

fn pick<'a>(rng: &mut ChaCha8Rng, xs: &[&'a str]) -> &'a str {
    xs.choose(rng).expect("non-empty")
}

fn expression(rng: &mut ChaCha8Rng, depth: u32) -> String {
    match if depth > 2 { rng.gen_range(0..3) } else { rng.gen_range(0..6) } {
        0 => pick(rng, NAMES).to_string(),
        1 => format!("{}", rng.gen_range(0..128)),
        2 => format!("{}.{}", pick(rng, NAMES), pick(rng, &["length", "shape", "dtype", "rank", "size"])),
        3 => format!("{}({})", pick(rng, FUNCS), expression(rng, depth + 1)),
        4 => format!(
            "{}({}, {})",
            pick(rng, FUNCS),
            expression(rng, depth + 1),
            expression(rng, depth + 1)
        ),
        _ => format!(
            "{} {} {}",
            expression(rng, depth + 1),
            pick(rng, &["+", "-", "*", "/", "===", "!==", "<", ">="]),
            expression(rng, depth + 1)
        ),
    }
}

fn statement(rng: &mut ChaCha8Rng, indent: usize, out: &mut String) {
    let pad = "  ".repeat(indent);
    match rng.gen_range(0..8) {
        0 | 1 => out.push_str(&format!(
            "{pad}var {} = {};\n",
            pick(rng, NAMES),
            expression(rng, 0)
        )),
        2 => out.push_str(&format!("{pad}{} = {};\n", pick(rng, NAMES), expression(rng, 0))),
        3 if indent < 3 => {
            out.push_str(&format!("{pad}if ({}) {{\n", expression(rng, 1)));
            for _ in 0..rng.gen_range(1..3) {
                statement(rng, indent + 1, out);
            }
            out.push_str(&format!("{pad}}}\n"));
        }
        4 if indent < 3 => {
            let i = pick(rng, &["i", "j", "k"]);
            out.push_str(&format!(
                "{pad}for (var {i} = 0; {i} < {}.length; {i}++) {{\n",
                pick(rng, NAMES)
            ));
            statement(rng, indent + 1, out);
            out.push_str(&format!("{pad}}}\n"));
        }
        5 => out.push_str(&format!("{pad}return {};\n", expression(rng, 0))),
        6 => out.push_str(&format!(
            "{pad}// {} the {} of the {}\n",
            pick(rng, &["Compute", "Check", "Update", "Broadcast", "Cast"]),
            pick(rng, NAMES),
            pick(rng, TYPES)
        )),
        _ => out.push_str(&format!(
            "{pad}util.assert({}, 'Error in {}: {} must be a {}');\n",
            expression(rng, 1),
            pick(rng, FUNCS),
            pick(rng, NAMES),
            pick(rng, TYPES)
        )),
    }
}

/// At least `min_len` bytes of pseudo-JavaScript, a pure function of `seed`.
pub fn synthetic_source(min_len: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::with_capacity(min_len + 512);
    while out.len() < min_len {
        let name = pick(&mut rng, FUNCS);
        let args: Vec<&str> = (0..rng.gen_range(1..4)).map(|_| pick(&mut rng, NAMES)).collect();
        out.push_str(&format!(
            "function {name}{}({}) {{\n",
            pick(&mut rng, TYPES),
            args.join(", ")
        ));
        for _ in 0..rng.gen_range(2..7) {
            statement(&mut rng, 1, &mut out);
        }
        out.push_str("}\n\n");
    }
    out
}
