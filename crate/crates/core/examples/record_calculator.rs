//! Regenerates `fixtures/calculator.chatlog`.
//!
//! Runs the engine on the calculator requirement with scripted team
//! responses and records every call, prompt digests included. Usage numbers
//! are the chars/4 estimate of the prompt and the response.
//!
//!     cargo run -p agilecoder --example record_calculator [-- <out.chatlog>]

use std::path::PathBuf;
use std::sync::Mutex;

use agilecoder::backend::{BackendError, ChatBackend, ChatRequest, ChatResponse, RecordingBackend, Usage};
use agilecoder::config::EngineConfig;
use agilecoder::engine::SprintEngine;
use agilecoder::tokens::{estimate_tokens, CharEstimate};

const REQUIREMENT: &str = include_str!("../fixtures/calculator.requirement.txt");

const CALC_PY: &str = r#"```python
# FILE: calc.py
"""Arithmetic operations for the calculator."""


def add(a, b):
    """Return the sum of a and b."""
    return a + b


def subtract(a, b):
    """Return a minus b."""
    return a - b


def multiply(a, b):
    """Return the product of a and b."""
    return a * b


def divide(a, b):
    """Return a divided by b. Raise ValueError when b is zero."""
    if b == 0:
        raise ValueError("cannot divide by zero")
    return a / b
```"#;

const TEST_CALC_PY: &str = r#"```python
# FILE: tests/test_calc.py
"""Unit tests for calc.py."""
import unittest

import calc


class CalcTest(unittest.TestCase):
    """Checks the four operations."""

    def test_add(self):
        """Adds two numbers."""
        self.assertEqual(calc.add(2, 3), 5)

    def test_subtract(self):
        """Subtracts the second number from the first."""
        self.assertEqual(calc.subtract(5, 3), 2)

    def test_multiply(self):
        """Multiplies two numbers."""
        self.assertEqual(calc.multiply(4, 3), 12)

    def test_divide(self):
        """Divides and rejects a zero divisor."""
        self.assertEqual(calc.divide(6, 3), 2)
        with self.assertRaises(ValueError):
            calc.divide(1, 0)


if __name__ == "__main__":
    unittest.main()
```"#;

fn main_py(subtract: &str) -> String {
    format!(
        r#"```python
# FILE: main.py
"""Command-line calculator: python3 main.py <a> <op> <b>."""
import sys

import calc


def calculate(a, op, b):
    """Apply the operator op to a and b and return the result."""
    if op == "+":
        return calc.add(a, b)
    if op == "-":
        return calc.{subtract}(a, b)
    if op == "*":
        return calc.multiply(a, b)
    if op == "/":
        return calc.divide(a, b)
    raise ValueError("unknown operator: " + op)


def format_number(value):
    """Render whole numbers without a trailing .0."""
    if float(value).is_integer():
        return str(int(value))
    return str(value)


def main(argv):
    """Parse argv, print the result and return the exit status."""
    if len(argv) != 3:
        print("usage: python3 main.py <a> <op> <b>", file=sys.stderr)
        return 2
    try:
        result = calculate(float(argv[0]), argv[1], float(argv[2]))
    except ValueError as err:
        print("error: " + str(err), file=sys.stderr)
        return 1
    print(format_number(result))
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
```"#
    )
}

const TEST_MAIN_PY: &str = r#"```python
# FILE: tests/test_main.py
"""Unit tests for main.py."""
import unittest

import main


class MainTest(unittest.TestCase):
    """Checks operator dispatch and the command-line entry point."""

    def test_add(self):
        """2 + 3 gives 5."""
        self.assertEqual(main.calculate(2, "+", 3), 5)

    def test_subtract(self):
        """5 - 3 gives 2."""
        self.assertEqual(main.calculate(5, "-", 3), 2)

    def test_unknown_operator(self):
        """An unknown operator raises ValueError."""
        with self.assertRaises(ValueError):
            main.calculate(1, "%", 2)

    def test_formatting(self):
        """Whole results print without a decimal point."""
        self.assertEqual(main.format_number(5.0), "5")
        self.assertEqual(main.format_number(2.5), "2.5")

    def test_main_status(self):
        """main returns 0 on success and 1 on division by zero."""
        self.assertEqual(main.main(["6", "/", "3"]), 0)
        self.assertEqual(main.main(["1", "/", "0"]), 1)


if __name__ == "__main__":
    unittest.main()
```"#;

const BACKLOG: &str = "```BACKLOG
TASK: T1 | Arithmetic module calc.py with add, subtract, multiply and divide
  AC: each function takes two numbers and returns the result
  AC: divide raises ValueError when the divisor is zero
TASK: T2 | Command-line interface main.py taking `<a> <op> <b>`
  AC: `python3 main.py 2 + 3` prints 5
  AC: an unknown operator or division by zero prints an error and exits non-zero
```";

fn responses() -> Vec<String> {
    let no_findings = "NO_FINDINGS".to_string();
    let review = |what: &str| format!("Please review {what}.");
    vec![
        // product planning
        format!("Here is the draft backlog.\n\n```BACKLOG\nTASK: T1 | Arithmetic module calc.py\n  AC: add, subtract, multiply and divide work\nTASK: T2 | Command-line interface main.py\n  AC: it prints results\n```"),
        "T1 should say that divide rejects a zero divisor, and T2 needs a concrete invocation and error behaviour. Please revise.".to_string(),
        format!("Revised backlog:\n\n{BACKLOG}"),
        format!("Approved.\n\n{BACKLOG}\n<CONSENSUS>"),
        // sprint 1
        "Sprint 1: I propose T1 only, since the CLI depends on it.".to_string(),
        "Agreed.\n\n```SPRINT\nTASK: T1\n```".to_string(),
        "Implement T1: calc.py with the four operations.".to_string(),
        CALC_PY.to_string(),
        review("calc.py for steps 1"),
        no_findings.clone(),
        review("calc.py against the sprint backlog"),
        no_findings.clone(),
        review("calc.py against the acceptance criteria"),
        no_findings.clone(),
        "Please test calc.py.".to_string(),
        format!("{TEST_CALC_PY}\n\n```COMMANDS\npython3 -c \"import calc; print(calc.divide(6, 3))\"\n```"),
        "Sprint 1 report: all checks passed and review found nothing.".to_string(),
        "```STATUS\nT1: completed\n```".to_string(),
        // sprint 2
        "Sprint 2: T2 is the only task left.".to_string(),
        "Agreed.\n\n```SPRINT\nTASK: T2\n```".to_string(),
        "Implement T2: main.py using calc.py.".to_string(),
        main_py("substract"),
        review("main.py for steps 1"),
        no_findings.clone(),
        review("main.py against the sprint backlog"),
        no_findings.clone(),
        review("main.py against the acceptance criteria"),
        no_findings.clone(),
        "Please test main.py.".to_string(),
        format!("{TEST_MAIN_PY}\n\n```COMMANDS\npython3 main.py 2 + 3\n```"),
        "test_subtract errors: main.calculate calls calc.substract, which does not exist. The function is calc.subtract.".to_string(),
        main_py("subtract"),
        "Sprint 2 report: the subtraction bug was fixed and all checks now pass.".to_string(),
        "```STATUS\nT2: completed\n```".to_string(),
        // documentation
        "Please write the README for the calculator.".to_string(),
        "# Calculator\n\nA command-line calculator for the four basic operations.\n\n## Requirements\n\nPython 3. No third-party libraries are needed.\n\n## Usage\n\n```\npython3 main.py 2 + 3\n```\n\nprints `5`. Supported operators are `+`, `-`, `*` and `/`. Division by zero prints an error and exits with status 1.\n\n## Tests\n\n```\npython3 tests/test_calc.py\npython3 tests/test_main.py\n```\n<CONSENSUS>".to_string(),
    ]
}

/// Serves the script in order with estimated usage.
struct Scripted {
    responses: Mutex<std::vec::IntoIter<String>>,
}

impl ChatBackend for Scripted {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let content = self
            .responses
            .lock()
            .unwrap()
            .next()
            .ok_or(BackendError::FixtureExhausted { index: 0 })?;
        let prompt: usize = request.messages.iter().map(|m| estimate_tokens(&m.content)).sum();
        Ok(ChatResponse {
            usage: Usage {
                prompt_tokens: prompt as u64,
                completion_tokens: estimate_tokens(&content) as u64,
            },
            content,
        })
    }
}

fn main() {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/calculator.chatlog"));
    let script = responses();
    let expected = script.len();
    let scripted = Scripted {
        responses: Mutex::new(script.into_iter()),
    };
    let backend = RecordingBackend::create(scripted, &out).expect("create fixture");
    let dir = tempfile::tempdir().expect("tempdir");
    let engine = SprintEngine::new(EngineConfig::default(), &backend, &CharEstimate, dir.path()).expect("engine");
    let report = engine.run(REQUIREMENT).expect("run");
    print!("{}", report.render());
    assert_eq!(backend.recorded(), expected, "script and engine disagree on the number of calls");
    println!("wrote {} records to {}", backend.recorded(), out.display());
}
