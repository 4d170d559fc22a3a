use std::path::Path;
use std::process::{Command, Output};

fn agilecoder(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_agilecoder")).args(args).output().unwrap()
}

fn fixtures() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures"))
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("user.py"), "class User:\n    pass\n").unwrap();
    std::fs::write(dir.path().join("user_manager.py"), "from user import User\n").unwrap();
    std::fs::write(dir.path().join("app.py"), "import user_manager\nimport pygame\n").unwrap();
    dir
}

#[test]
fn usage_errors_exit_64() {
    assert_eq!(agilecoder(&[]).status.code(), Some(64));
    assert_eq!(agilecoder(&["frobnicate"]).status.code(), Some(64));
    assert_eq!(agilecoder(&["run", "--backend", "carrier-pigeon"]).status.code(), Some(64));
    let missing = agilecoder(&["run", "--requirement", "x"]);
    assert_eq!(missing.status.code(), Some(64));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("workspace"));
    assert_eq!(agilecoder(&["--help"]).status.code(), Some(0));
}

#[test]
fn graph_and_plan() {
    let ws = workspace();
    let dir = ws.path().to_str().unwrap();
    let out = agilecoder(&["graph", dir]);
    assert!(out.status.success());
    assert_eq!(
        stdout(&out),
        "app.py\nuser.py\nuser_manager.py\napp.py -> user_manager.py\nuser_manager.py -> user.py\n"
    );
    let out = agilecoder(&["plan", dir, "--changed", "user.py"]);
    assert_eq!(
        stdout(&out),
        "user.py tests/test_user.py\nuser_manager.py tests/test_user_manager.py\napp.py tests/test_app.py\n"
    );
    let out = agilecoder(&["plan", dir, "--changed", "user_manager.py"]);
    assert_eq!(stdout(&out), "user_manager.py tests/test_user_manager.py\napp.py tests/test_app.py\n");
    assert_eq!(agilecoder(&["plan", dir, "--changed", "../x.py"]).status.code(), Some(64));
}

#[test]
fn replay_verify() {
    let good = fixtures().join("calculator.chatlog");
    let out = agilecoder(&["replay-verify", good.to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(stdout(&out), "36 records, 36 with digests\n");

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.chatlog");
    std::fs::write(&bad, "{\"seq\":2,\"response\":\"x\",\"prompt_tokens\":1,\"completion_tokens\":1}\n").unwrap();
    assert_eq!(agilecoder(&["replay-verify", bad.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn run_from_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("agilecoder.toml");
    std::fs::write(
        &config,
        format!(
            "requirement_file = \"{}\"\nworkspace = \"out\"\n\n[backend]\nmode = \"replay\"\nfixture = \"{}\"\nstrict = true\n\n[prices.\"gpt-3.5-turbo\"]\ninput = \"0.0005\"\noutput = \"0.0015\"\n",
            fixtures().join("calculator.requirement.txt").display(),
            fixtures().join("calculator.chatlog").display(),
        ),
    )
    .unwrap();
    let out = agilecoder(&["run", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.starts_with("final decision: deliver\n#Sprints: 2\n"), "{text}");
    assert!(text.contains("Expenses (USD): 0.011109\n"));
    assert!(dir.path().join("out/main.py").exists());

    // The sprint cap flag overrides the file.
    let capped = dir.path().join("capped");
    let out = agilecoder(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--workspace",
        capped.to_str().unwrap(),
        "--sprint-cap",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(2));
}
