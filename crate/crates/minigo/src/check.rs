//! Build-time checks: identifier resolution and unused-declaration errors.

use std::collections::HashMap;

use crate::ast::*;
use crate::Diagnostic;

pub const PACKAGES: &[&str] = &[
    "assert", "errors", "fmt", "os", "runtime", "sort", "strconv", "strings", "sync", "testing",
    "time",
];

pub const BUILTIN_IDENTS: &[&str] = &[
    "len", "append", "delete", "panic", "make", "int", "int64", "int32", "float64", "string",
    "bool", "byte", "rune", "cap",
];

struct VarInfo {
    pos: Pos,
    used: bool,
    check_unused: bool,
}

pub struct Checker<'p> {
    prog: &'p Program,
    file: String,
    scopes: Vec<HashMap<String, VarInfo>>,
    diags: Vec<Diagnostic>,
}

/// Resolve identifiers and flag unused local declarations across the program.
pub fn check_program(prog: &Program) -> Vec<Diagnostic> {
    let mut all = Vec::new();
    for gv in &prog.globals {
        let mut ck = Checker {
            prog,
            file: prog.files[gv.file_idx].path.clone(),
            scopes: vec![HashMap::new()],
            diags: Vec::new(),
        };
        for e in &gv.exprs {
            ck.walk_expr(e);
        }
        all.extend(ck.diags);
    }
    let mut defs: Vec<&std::rc::Rc<FnDef>> =
        prog.funcs.values().chain(prog.methods.values()).collect();
    defs.sort_by_key(|d| (d.file_idx, d.decl_line));
    for def in defs {
        let mut ck = Checker {
            prog,
            file: prog.files[def.file_idx].path.clone(),
            scopes: Vec::new(),
            diags: Vec::new(),
        };
        ck.walk_fn(def);
        all.extend(ck.diags);
    }
    all.sort_by(|a, b| (&a.file, a.line, a.col).cmp(&(&b.file, b.line, b.col)));
    all
}

impl<'p> Checker<'p> {
    fn diag(&mut self, pos: Pos, message: String) {
        self.diags.push(Diagnostic {
            file: self.file.clone(),
            line: pos.line,
            col: pos.col,
            message,
        });
    }

    fn push_scope(&mut self) {
        self.scopes.push(HashMap::new());
    }

    fn pop_scope(&mut self) {
        if let Some(scope) = self.scopes.pop() {
            let mut unused: Vec<(&String, &VarInfo)> =
                scope.iter().filter(|(_, v)| v.check_unused && !v.used).collect();
            unused.sort_by_key(|(_, v)| (v.pos.line, v.pos.col));
            for (name, info) in unused {
                self.diag(info.pos, format!("declared and not used: {name}"));
            }
        }
    }

    fn declare(&mut self, name: &str, pos: Pos, check_unused: bool) {
        if name == "_" {
            return;
        }
        self.scopes
            .last_mut()
            .expect("scope")
            .insert(name.to_string(), VarInfo { pos, used: false, check_unused });
    }

    /// Resolve a name; `mark_used` distinguishes reads from bare assignment targets.
    fn resolve(&mut self, name: &str, pos: Pos, mark_used: bool) {
        if name == "_" {
            return;
        }
        for scope in self.scopes.iter_mut().rev() {
            if let Some(info) = scope.get_mut(name) {
                if mark_used {
                    info.used = true;
                }
                return;
            }
        }
        if self.prog.funcs.contains_key(name)
            || self.prog.structs.contains_key(name)
            || self.prog.globals.iter().any(|g| g.names.iter().any(|n| n == name))
            || PACKAGES.contains(&name)
            || BUILTIN_IDENTS.contains(&name)
        {
            return;
        }
        self.diag(pos, format!("undefined: {name}"));
    }

    fn walk_fn(&mut self, def: &FnDef) {
        self.push_scope();
        if let Some((var, _)) = &def.recv {
            self.declare(var, Pos { line: def.decl_line, col: 1 }, false);
        }
        for p in &def.params {
            self.declare(&p.name, Pos { line: def.decl_line, col: 1 }, false);
        }
        self.walk_block(&def.body);
        self.pop_scope();
    }

    fn walk_block(&mut self, block: &Block) {
        self.push_scope();
        for s in &block.stmts {
            self.walk_stmt(s);
        }
        self.pop_scope();
    }

    fn walk_stmt(&mut self, stmt: &Stmt) {
        match stmt {
            Stmt::Short { names, exprs, pos } => {
                for e in exprs {
                    self.walk_expr(e);
                }
                for name in names {
                    let exists = self
                        .scopes
                        .last()
                        .map(|s| s.contains_key(name.as_str()))
                        .unwrap_or(false);
                    if exists {
                        self.resolve(name, *pos, false);
                    } else {
                        self.declare(name, *pos, true);
                    }
                }
            }
            Stmt::Var { names, exprs, pos, .. } => {
                for e in exprs {
                    self.walk_expr(e);
                }
                for name in names {
                    self.declare(name, *pos, true);
                }
            }
            Stmt::Assign { targets, exprs, op, .. } => {
                for e in exprs {
                    self.walk_expr(e);
                }
                for t in targets {
                    match t {
                        Expr::Ident(name, pos) => {
                            // Compound assignment reads the old value.
                            self.resolve(name, *pos, *op != AssignOp::Set);
                        }
                        other => self.walk_expr(other),
                    }
                }
            }
            Stmt::IncDec { target, .. } => match target {
                Expr::Ident(name, pos) => self.resolve(name, *pos, true),
                other => self.walk_expr(other),
            },
            Stmt::Expr(e) => self.walk_expr(e),
            Stmt::Send { ch, value, .. } => {
                self.walk_expr(ch);
                self.walk_expr(value);
            }
            Stmt::If { init, cond, then, els, .. } => {
                self.push_scope();
                if let Some(i) = init {
                    self.walk_stmt(i);
                }
                self.walk_expr(cond);
                self.walk_block(then);
                if let Some(e) = els {
                    self.walk_stmt(e);
                }
                self.pop_scope();
            }
            Stmt::ForClassic { init, cond, post, body, .. } => {
                self.push_scope();
                if let Some(i) = init {
                    self.walk_stmt(i);
                }
                if let Some(c) = cond {
                    self.walk_expr(c);
                }
                if let Some(p) = post {
                    self.walk_stmt(p);
                }
                self.walk_block(body);
                self.pop_scope();
            }
            Stmt::ForRange { key, val, subject, body, pos } => {
                self.walk_expr(subject);
                self.push_scope();
                if let Some(k) = key {
                    self.declare(k, *pos, true);
                }
                if let Some(v) = val {
                    self.declare(v, *pos, true);
                }
                self.walk_block(body);
                self.pop_scope();
            }
            Stmt::Return { exprs, .. } => {
                for e in exprs {
                    self.walk_expr(e);
                }
            }
            Stmt::Go { call, .. } | Stmt::Defer { call, .. } => self.walk_expr(call),
            Stmt::Select { cases, default, .. } => {
                for case in cases {
                    self.walk_expr(&case.ch);
                    self.push_scope();
                    if let Some(b) = &case.bind {
                        self.declare(b, case.pos, true);
                    }
                    self.walk_block(&case.body);
                    self.pop_scope();
                }
                if let Some((body, _)) = default {
                    self.walk_block(body);
                }
            }
            Stmt::Break(_) | Stmt::Continue(_) => {}
            Stmt::Block(b) => self.walk_block(b),
        }
    }

    fn walk_expr(&mut self, expr: &Expr) {
        match expr {
            Expr::Ident(name, pos) => self.resolve(name, *pos, true),
            Expr::Selector(base, _, _) => self.walk_expr(base),
            Expr::Index(base, idx, _) => {
                self.walk_expr(base);
                self.walk_expr(idx);
            }
            Expr::Call { callee, args, .. } => {
                self.walk_expr(callee);
                for a in args {
                    self.walk_expr(a);
                }
            }
            Expr::Binary { lhs, rhs, .. } => {
                self.walk_expr(lhs);
                self.walk_expr(rhs);
            }
            Expr::Unary { operand, .. } | Expr::Recv(operand, _) => self.walk_expr(operand),
            Expr::SliceLit { elems, .. } => {
                for e in elems {
                    self.walk_expr(e);
                }
            }
            Expr::MapLit { entries, .. } => {
                for (k, v) in entries {
                    self.walk_expr(k);
                    self.walk_expr(v);
                }
            }
            Expr::StructLit { ty, named, positional, pos } => {
                if let TypeRef::Named(name) = ty {
                    if !self.prog.structs.contains_key(name) {
                        self.diag(*pos, format!("undefined: {name}"));
                    }
                }
                for (_, e) in named {
                    self.walk_expr(e);
                }
                for e in positional {
                    self.walk_expr(e);
                }
            }
            Expr::FuncLit(def, _) => {
                self.push_scope();
                for p in &def.params {
                    self.declare(&p.name, Pos { line: def.decl_line, col: 1 }, false);
                }
                self.walk_block(&def.body);
                self.pop_scope();
            }
            Expr::MakeSlice(Some(len), _) => self.walk_expr(len),
            _ => {}
        }
    }
}
