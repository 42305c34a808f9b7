//! Built-in grammars used by tests, benchmarks and the CLI.

use crate::grammar::{parse_ebnf, Grammar};
use crate::toolgrammar::{build_tool_dispatch, gen_tool_pool, schema_to_grammar, ToolFormat};

pub const JSON_LITE: &str = r#"# JSON without whitespace, exponents or unicode escapes
root ::= value
value ::= object | array | string | number | "true" | "false" | "null"
object ::= "{" ( member ( "," member )* )? "}"
member ::= string ":" value
array ::= "[" ( value ( "," value )* )? "]"
string ::= "\"" char* "\""
char ::= [^"\\] | "\\" ["\\/nt]
number ::= "-"? [0-9]+ ( "." [0-9]+ )?
"#;

/// Named text grammars exercising recursion, nullable rules, classes and repetitions.
pub const TEXT_GRAMMARS: &[(&str, &str)] = &[
    ("json_lite", JSON_LITE),
    ("right_rec", "root ::= \"a\" root | \"b\""),
    ("left_rec", "root ::= root \"a\" | \"a\""),
    ("balanced", "root ::= \"(\" root \")\" root | \"\""),
    (
        "arith",
        "root ::= expr\nexpr ::= term ( [+-] term )*\nterm ::= factor ( [*/] factor )*\nfactor ::= [0-9]+ | \"(\" expr \")\"",
    ),
    ("nullable_chain", "root ::= a b c \"z\"\na ::= \"x\"?\nb ::= a a\nc ::= [yz]*"),
    ("mutual", "root ::= A\nA ::= \"a\" B?\nB ::= \"b\" A?"),
    ("digits_bounded", "root ::= [0-9]{2,4} (\",\" [0-9]{2,4})*"),
    ("long_rep", "root ::= \"<\" [a-z]{3,40} \">\""),
    ("rep_low_min", "root ::= (\"ab\" | \"c\"){1,30} \";\""),
    ("rep_unbounded_min", "root ::= [xy]{12,} \".\""),
    ("nested_rep", "root ::= (\"[\" [0-9]{0,12} \"]\"){2,10}"),
    ("kv_list", "root ::= pair (\";\" pair)*\npair ::= key \"=\" val\nkey ::= [a-z]{1,10}\nval ::= [0-9]+ | \"'\" [^']{0,20} \"'\""),
    ("ambiguous", "root ::= x x\nx ::= \"a\" | \"aa\" | \"\""),
    ("keywords", "root ::= (\"if\" | \"int\" | \"in\" | \"i\") \" \" [a-z]+"),
];

pub fn text_grammar(name: &str) -> Option<Grammar> {
    TEXT_GRAMMARS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, src)| parse_ebnf(src).expect("built-in grammar parses"))
}

/// Seed of the tool pool behind the tool grammars.
pub const TOOL_SEED: u64 = 42;

/// Tool-calling grammars: (name, tool count, format).
pub const TOOL_GRAMMARS: &[(&str, usize, ToolFormat)] = &[
    ("tools_1", 1, ToolFormat::Llama),
    ("tools_5", 5, ToolFormat::Llama),
    ("tools_20", 20, ToolFormat::Llama),
    ("tools_5_harmony", 5, ToolFormat::HarmonyLite),
];

pub fn tool_grammar(name: &str) -> Option<Grammar> {
    if name == "tool_args" {
        let pool = gen_tool_pool(1, TOOL_SEED);
        return Some(schema_to_grammar(&pool[0].params).expect("generated schema compiles"));
    }
    let &(_, n, fmt) = TOOL_GRAMMARS.iter().find(|(x, ..)| *x == name)?;
    Some(build_tool_dispatch(&gen_tool_pool(n, TOOL_SEED), fmt).expect("generated tools compile"))
}

/// Every built-in grammar by name: the text grammars, a bare schema grammar and the tool grammars.
pub fn all_grammars() -> Vec<(String, Grammar)> {
    let mut out: Vec<(String, Grammar)> = TEXT_GRAMMARS
        .iter()
        .map(|(n, _)| (n.to_string(), text_grammar(n).unwrap()))
        .collect();
    out.push(("tool_args".into(), tool_grammar("tool_args").unwrap()));
    for (n, ..) in TOOL_GRAMMARS {
        out.push((n.to_string(), tool_grammar(n).unwrap()));
    }
    out
}

pub fn grammar(name: &str) -> Option<Grammar> {
    text_grammar(name).or_else(|| tool_grammar(name))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_text_grammars_parse_and_validate() {
        for (name, src) in TEXT_GRAMMARS {
            let g = parse_ebnf(src).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert!(g.validate().is_empty(), "{name}: {:?}", g.validate());
        }
    }

    #[test]
    fn corpus_has_twenty_valid_grammars() {
        let all = all_grammars();
        assert!(all.len() >= 20);
        for (name, g) in &all {
            assert!(g.validate().is_empty(), "{name}: {:?}", g.validate());
            assert!(grammar(name).is_some());
        }
    }
}
