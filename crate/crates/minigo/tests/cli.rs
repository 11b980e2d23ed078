use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn write(root: &Path, rel: &str, content: &str) {
    let path = root.join(rel);
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    std::fs::write(path, content).unwrap();
}

fn minigo(root: &Path, args: &[&str]) -> Output {
    minigo_env(root, args, &[])
}

fn minigo_env(root: &Path, args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_minigo"));
    cmd.current_dir(root).args(args);
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

const CALC_GO: &str = r#"package calc

func Sum(xs []int) int {
	total := 0
	for _, x := range xs {
		total = total + x
	}
	return total
}
"#;

const CALC_TEST_GO: &str = r#"package calc

func TestSum(t *testing.T) {
	cases := []struct {
		name string
		xs   []int
		want int
	}{
		{name: "empty", xs: []int{}, want: 0},
		{name: "three values", xs: []int{1, 2, 3}, want: 6},
	}
	for _, tc := range cases {
		t.Run(tc.name, func(t *testing.T) {
			assert.Equal(t, tc.want, Sum(tc.xs))
		})
	}
}
"#;

#[test]
fn passing_suite_prints_go_style_output() {
    let ws = TempDir::new().unwrap();
    write(ws.path(), "calc/calc.go", CALC_GO);
    write(ws.path(), "calc/calc_test.go", CALC_TEST_GO);

    let out = minigo(ws.path(), &["test", "calc"]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("=== RUN   TestSum\n"), "got:\n{text}");
    assert!(text.contains("=== RUN   TestSum/empty\n"));
    assert!(text.contains("=== RUN   TestSum/three_values\n"));
    assert!(text.contains("--- PASS: TestSum ("));
    assert!(text.contains("    --- PASS: TestSum/three_values ("));
    assert!(text.contains("\nPASS\n"));
    assert!(text.contains("\nok  \tcalc\t"));
}

#[test]
fn case_selector_runs_single_subtest() {
    let ws = TempDir::new().unwrap();
    write(ws.path(), "calc/calc.go", CALC_GO);
    write(ws.path(), "calc/calc_test.go", CALC_TEST_GO);

    let out = minigo(ws.path(), &["test", "calc:TestSum/three_values"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("=== RUN   TestSum/three_values"));
    assert!(!text.contains("TestSum/empty"), "filtered case ran:\n{text}");
}

#[test]
fn failing_assert_prints_details_and_exits_one() {
    let ws = TempDir::new().unwrap();
    write(
        ws.path(),
        "app/app_test.go",
        r#"package app

func TestGreeting(t *testing.T) {
	got := "hello"
	assert.Equal(t, "bye", got)
}
"#,
    );

    let out = minigo(ws.path(), &["test", "app"]);
    assert_eq!(out.status.code(), Some(1));
    let text = stdout(&out);
    assert!(text.contains("--- FAIL: TestGreeting ("), "got:\n{text}");
    assert!(
        text.contains("app_test.go:5: Not equal: expected: \"bye\" actual: \"hello\""),
        "got:\n{text}"
    );
    assert!(text.contains("\nFAIL\n"));
    assert!(text.contains("\nFAIL\tapp\t"));
}

#[test]
fn same_seed_gives_identical_output() {
    let ws = TempDir::new().unwrap();
    write(
        ws.path(),
        "m/m_test.go",
        r#"package m

func TestOrder(t *testing.T) {
	m := map[string]int{"a": 1, "b": 2, "c": 3}
	keys := []string{}
	for k := range m {
		keys = append(keys, k)
	}
	t.Logf("%v", keys)
	assert.Len(t, keys, 3)
}
"#,
    );

    let a = minigo(ws.path(), &["test", "m", "--count", "5", "--seed", "42"]);
    let b = minigo(ws.path(), &["test", "m", "--count", "5", "--seed", "42"]);
    assert_eq!(stdout(&a), stdout(&b));
    assert_eq!(a.status.code(), b.status.code());
}

#[test]
fn seed_env_var_is_honored() {
    let ws = TempDir::new().unwrap();
    write(
        ws.path(),
        "m/m_test.go",
        r#"package m

func TestOrder(t *testing.T) {
	m := map[string]int{"x": 1, "y": 2, "z": 3}
	out := ""
	for k := range m {
		out = out + k
	}
	t.Logf("%s", out)
}
"#,
    );

    let flag = minigo(ws.path(), &["test", "m", "--count", "3", "--seed", "99"]);
    let env = minigo_env(ws.path(), &["test", "m", "--count", "3"], &[("MINIGO_SEED", "99")]);
    assert_eq!(stdout(&flag), stdout(&env));
}

#[test]
fn map_iteration_order_varies_across_runs() {
    let ws = TempDir::new().unwrap();
    write(
        ws.path(),
        "m/m_test.go",
        r#"package m

func TestJoin(t *testing.T) {
	m := map[string]int{"alpha": 1, "beta": 2}
	parts := []string{}
	for k, v := range m {
		parts = append(parts, fmt.Sprintf("%s=%d", k, v))
	}
	assert.Equal(t, "alpha=1,beta=2", strings.Join(parts, ","))
}
"#,
    );

    let out = minigo(ws.path(), &["test", "m", "--count", "40", "--seed", "3"]);
    assert_eq!(out.status.code(), Some(1));
    let text = stdout(&out);
    assert!(text.contains("--- PASS: TestJoin"), "never passed:\n{text}");
    assert!(text.contains("--- FAIL: TestJoin"), "never failed:\n{text}");
}

#[test]
fn race_flag_defers_goroutines_more_often() {
    let ws = TempDir::new().unwrap();
    let src = r#"package g

type counter struct {
	n int
}

func (c *counter) bump() {
	c.n++
}

func TestBump(t *testing.T) {
	c := &counter{n: 0}
	go c.bump()
	assert.Equal(t, 1, c.n)
}
"#;
    write(ws.path(), "g/g_test.go", src);

    let race = minigo(ws.path(), &["test", "g", "--count", "30", "--race", "--seed", "5"]);
    let fails = stdout(&race).matches("--- FAIL: TestBump").count();
    let passes = stdout(&race).matches("--- PASS: TestBump").count();
    assert!(fails > 5, "race mode should defer often, fails={fails}");
    assert!(passes > 5, "race mode should still pass sometimes, passes={passes}");

    let calm = minigo(ws.path(), &["test", "g", "--count", "30", "--seed", "5"]);
    let calm_fails = stdout(&calm).matches("--- FAIL: TestBump").count();
    assert!(calm_fails < fails, "without --race deferral should be rarer");
}

#[test]
fn goroutine_sync_via_channel_always_passes() {
    let ws = TempDir::new().unwrap();
    write(
        ws.path(),
        "g/g_test.go",
        r#"package g

func TestChan(t *testing.T) {
	done := make(chan int)
	go func() {
		done <- 7
	}()
	v := <-done
	assert.Equal(t, 7, v)
}
"#,
    );
    let out = minigo(ws.path(), &["test", "g", "--count", "20", "--race", "--seed", "11"]);
    assert_eq!(out.status.code(), Some(0), "got:\n{}", stdout(&out));
}

#[test]
fn waitgroup_synchronizes_goroutines() {
    let ws = TempDir::new().unwrap();
    write(
        ws.path(),
        "g/g_test.go",
        r#"package g

func TestWait(t *testing.T) {
	var wg sync.WaitGroup
	total := 0
	for i := 0; i < 4; i++ {
		wg.Add(1)
		n := i
		go func() {
			total = total + n
			wg.Done()
		}()
	}
	wg.Wait()
	assert.Equal(t, 6, total)
}
"#,
    );
    let out = minigo(ws.path(), &["test", "g", "--count", "10", "--race", "--seed", "2"]);
    assert_eq!(out.status.code(), Some(0), "got:\n{}", stdout(&out));
}

#[test]
fn select_with_timer_does_not_deadlock() {
    let ws = TempDir::new().unwrap();
    write(
        ws.path(),
        "s/s_test.go",
        r#"package s

func TestTimeout(t *testing.T) {
	ch := make(chan string)
	select {
	case v := <-ch:
		t.Fatalf("unexpected: %s", v)
	case <-time.After(10 * time.Millisecond):
	}
}
"#,
    );
    let out = minigo(ws.path(), &["test", "s", "--count", "5", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(0), "got:\n{}", stdout(&out));
}

#[test]
fn deadlock_is_reported_as_panic() {
    let ws = TempDir::new().unwrap();
    write(
        ws.path(),
        "d/d_test.go",
        r#"package d

func TestStuck(t *testing.T) {
	ch := make(chan int)
	<-ch
}
"#,
    );
    let out = minigo(ws.path(), &["test", "d"]);
    assert_eq!(out.status.code(), Some(1));
    let text = stdout(&out);
    assert!(
        text.contains("all goroutines are asleep - deadlock!"),
        "got:\n{text}"
    );
    assert!(text.contains("--- FAIL: TestStuck"));
}

#[test]
fn runaway_test_hits_timeout_verdict() {
    let ws = TempDir::new().unwrap();
    write(
        ws.path(),
        "r/r_test.go",
        r#"package r

func TestSpin(t *testing.T) {
	n := 0
	for i := 0; i >= 0; i++ {
		n = n + 1
	}
	assert.Equal(t, 0, n)
}
"#,
    );
    let out = minigo(ws.path(), &["test", "r", "--timeout", "1"]);
    assert_eq!(out.status.code(), Some(1));
    let text = stdout(&out);
    assert!(text.contains("--- TIMEOUT: TestSpin"), "got:\n{text}");
}

#[test]
fn build_reports_diagnostics_in_source_order() {
    let ws = TempDir::new().unwrap();
    write(
        ws.path(),
        "bad/bad.go",
        r#"package bad

func Broken() int {
	x := 1
	y := missingFn(2)
	return y
}

func Also() {
	unused := "hello"
}
"#,
    );
    let out = minigo(ws.path(), &["build", "bad"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    let lines: Vec<&str> = err.lines().collect();
    assert_eq!(
        lines,
        vec![
            "bad/bad.go:4:2: declared and not used: x",
            "bad/bad.go:5:7: undefined: missingFn",
            "bad/bad.go:10:2: declared and not used: unused",
        ],
        "got:\n{err}"
    );
}

#[test]
fn build_reports_syntax_errors() {
    let ws = TempDir::new().unwrap();
    write(ws.path(), "bad/bad.go", "package bad\n\nfunc Broken( {\n\treturn 1\n}\n");
    let out = minigo(ws.path(), &["build", "bad"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("syntax error"), "got:\n{}", stderr(&out));
}

#[test]
fn build_succeeds_on_clean_tree() {
    let ws = TempDir::new().unwrap();
    write(ws.path(), "calc/calc.go", CALC_GO);
    write(ws.path(), "calc/calc_test.go", CALC_TEST_GO);
    let out = minigo(ws.path(), &["build", "."]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
}

#[test]
fn unknown_test_name_warns_and_passes() {
    let ws = TempDir::new().unwrap();
    write(ws.path(), "calc/calc.go", CALC_GO);
    write(ws.path(), "calc/calc_test.go", CALC_TEST_GO);
    let out = minigo(ws.path(), &["test", "calc:TestNope"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("testing: warning: no tests to run"));
}

#[test]
fn root_files_are_shared_into_every_target() {
    let ws = TempDir::new().unwrap();
    write(
        ws.path(),
        "shared.go",
        r#"package main

func Shared() string {
	return "from-root"
}
"#,
    );
    write(
        ws.path(),
        "uses/uses_test.go",
        r#"package uses

func TestShared(t *testing.T) {
	assert.Equal(t, "from-root", Shared())
}
"#,
    );
    let out = minigo(ws.path(), &["test", "uses"]);
    assert_eq!(out.status.code(), Some(0), "got:\n{}", stdout(&out));
}

#[test]
fn recorder_support_logs_entries_with_sentinel_for_goroutines() {
    let ws = TempDir::new().unwrap();
    write(
        ws.path(),
        "flakyguard_support.go",
        r#"package main

var fgSeen = make(map[string]bool)

func fgRecordEntry(file string, line int, name string) {
	logPath := os.Getenv("FLAKYGUARD_LOG")
	if logPath == "" {
		return
	}
	cFile, cLine, cName, ok := runtime.Caller(2)
	if !ok {
		cFile = "-"
		cLine = 0
		cName = "-"
	}
	key := fmt.Sprintf("%s:%d:%s<-%s:%d:%s", file, line, name, cFile, cLine, cName)
	if fgSeen[key] {
		return
	}
	fgSeen[key] = true
	entry := fmt.Sprintf("MethodEntry: %s, %d, %s Caller: %s, %d, %s", file, line, name, cFile, cLine, cName)
	if !os.AppendLine(logPath, entry) {
		os.AppendLine(logPath, "RECORDER-ERROR")
	}
}
"#,
    );
    write(
        ws.path(),
        "chain/svc.go",
        r#"package chain

type store struct {
	calls int
}

func (s *store) UpdateInfo(name string) {
	fgRecordEntry("chain/svc.go", 7, "store.UpdateInfo")
	s.calls++
	_ = name
}

type controller struct {
	db *store
}

func (c *controller) ValidateIdentity(name string) {
	fgRecordEntry("chain/svc.go", 17, "controller.ValidateIdentity")
	go c.db.UpdateInfo(name)
}

func AddProgram(c *controller, name string) {
	fgRecordEntry("chain/svc.go", 22, "AddProgram")
	c.ValidateIdentity(name)
}
"#,
    );
    write(
        ws.path(),
        "chain/svc_test.go",
        r#"package chain

func TestAddProgram(t *testing.T) {
	fgRecordEntry("chain/svc_test.go", 3, "TestAddProgram")
	s := &store{calls: 0}
	c := &controller{db: s}
	AddProgram(c, "prog")
	for i := 0; i < 3; i++ {
		AddProgram(c, "again")
	}
}
"#,
    );

    let log = ws.path().join("fg.log");
    let out = minigo_env(
        ws.path(),
        &["test", "chain", "--seed", "8"],
        &[("FLAKYGUARD_LOG", log.to_str().unwrap())],
    );
    assert_eq!(out.status.code(), Some(0), "got:\n{}", stdout(&out));

    let text = std::fs::read_to_string(&log).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines.contains(&"MethodEntry: chain/svc_test.go, 3, TestAddProgram Caller: -, 0, -"));
    assert!(lines
        .contains(&"MethodEntry: chain/svc.go, 22, AddProgram Caller: chain/svc_test.go, 3, TestAddProgram"));
    assert!(lines
        .contains(&"MethodEntry: chain/svc.go, 17, controller.ValidateIdentity Caller: chain/svc.go, 22, AddProgram"));
    // Goroutines start on a fresh stack, so the callee records the sentinel caller.
    assert!(lines.contains(&"MethodEntry: chain/svc.go, 7, store.UpdateInfo Caller: -, 0, -"));
    // Four AddProgram calls, one logged edge: the support unit dedups per run.
    let dedup = lines
        .iter()
        .filter(|l| l.contains("22, AddProgram Caller"))
        .count();
    assert_eq!(dedup, 1, "log:\n{text}");
}

#[test]
fn env_mutations_leak_across_tests_without_setenv_helper() {
    let ws = TempDir::new().unwrap();
    write(
        ws.path(),
        "e/e_test.go",
        r#"package e

func TestPollutes(t *testing.T) {
	os.Setenv("APP_MODE", "debug")
	assert.Equal(t, "debug", os.Getenv("APP_MODE"))
}

func TestReadsMode(t *testing.T) {
	assert.Equal(t, "", os.Getenv("APP_MODE"))
}
"#,
    );
    let out = minigo(ws.path(), &["test", "e", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(1));
    let text = stdout(&out);
    assert!(text.contains("--- PASS: TestPollutes"));
    assert!(text.contains("--- FAIL: TestReadsMode"), "got:\n{text}");
}

#[test]
fn t_setenv_restores_after_test() {
    let ws = TempDir::new().unwrap();
    write(
        ws.path(),
        "e/e_test.go",
        r#"package e

func TestScoped(t *testing.T) {
	t.Setenv("APP_MODE", "debug")
	assert.Equal(t, "debug", os.Getenv("APP_MODE"))
}

func TestReadsMode(t *testing.T) {
	assert.Equal(t, "", os.Getenv("APP_MODE"))
}
"#,
    );
    let out = minigo(ws.path(), &["test", "e", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(0), "got:\n{}", stdout(&out));
}

#[test]
fn virtual_clock_advances_and_truncates() {
    let ws = TempDir::new().unwrap();
    write(
        ws.path(),
        "c/c_test.go",
        r#"package c

func TestClock(t *testing.T) {
	a := time.Now()
	b := time.Now()
	assert.True(t, b.After(a))
	tr := b.Truncate(time.Second)
	assert.True(t, tr.Before(b) || tr.Equal(b))
	assert.Equal(t, int64(0), tr.UnixNano()%1000000000)
}
"#,
    );
    let out = minigo(ws.path(), &["test", "c", "--count", "3", "--seed", "6"]);
    assert_eq!(out.status.code(), Some(0), "got:\n{}", stdout(&out));
}

#[test]
fn panics_fail_the_test_with_stack() {
    let ws = TempDir::new().unwrap();
    write(
        ws.path(),
        "p/p_test.go",
        r#"package p

func boom() {
	panic("kaboom")
}

func TestPanic(t *testing.T) {
	boom()
}
"#,
    );
    let out = minigo(ws.path(), &["test", "p"]);
    assert_eq!(out.status.code(), Some(1));
    let text = stdout(&out);
    assert!(text.contains("panic: kaboom"), "got:\n{text}");
    assert!(text.contains("--- FAIL: TestPanic"));
}
