//! Syntax tree and lowering from the tree-sitter CST.

use std::collections::HashMap;
use std::rc::Rc;

use crate::Diagnostic;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Pos {
    pub line: u32,
    pub col: u32,
}

impl Pos {
    fn of(node: &tree_sitter::Node) -> Pos {
        let p = node.start_position();
        Pos { line: p.row as u32 + 1, col: p.column as u32 + 1 }
    }
}

pub struct Program {
    pub files: Vec<SourceFile>,
    pub funcs: HashMap<String, Rc<FnDef>>,
    pub methods: HashMap<(String, String), Rc<FnDef>>,
    pub structs: HashMap<String, Rc<StructShape>>,
    pub globals: Vec<GlobalVar>,
}

pub struct SourceFile {
    pub path: String,
    pub src: String,
}

pub struct StructShape {
    pub name: String,
    pub fields: Vec<String>,
}

pub struct FnDef {
    pub name: String,
    pub file_idx: usize,
    pub decl_line: u32,
    pub recv: Option<(String, String)>,
    pub params: Vec<Param>,
    pub body: Block,
}

pub struct Param {
    pub name: String,
    pub variadic: bool,
}

pub struct GlobalVar {
    pub names: Vec<String>,
    pub ty: Option<TypeRef>,
    pub exprs: Vec<Expr>,
    pub pos: Pos,
    pub file_idx: usize,
}

#[derive(Default)]
pub struct Block {
    pub stmts: Vec<Stmt>,
}

#[derive(Clone)]
pub enum TypeRef {
    Named(String),
    Qualified(String, String),
    Slice(Box<TypeRef>),
    Map(Box<TypeRef>, Box<TypeRef>),
    Chan(Box<TypeRef>),
    Ptr(Box<TypeRef>),
    StructInline(Rc<StructShape>),
    FuncType,
    Other(String),
}

pub enum Stmt {
    Short { names: Vec<String>, exprs: Vec<Expr>, pos: Pos },
    Var { names: Vec<String>, ty: Option<TypeRef>, exprs: Vec<Expr>, pos: Pos },
    Assign { targets: Vec<Expr>, op: AssignOp, exprs: Vec<Expr>, pos: Pos },
    IncDec { target: Expr, delta: i64, pos: Pos },
    Expr(Expr),
    Send { ch: Expr, value: Expr, pos: Pos },
    If { init: Option<Box<Stmt>>, cond: Expr, then: Block, els: Option<Box<Stmt>>, pos: Pos },
    ForClassic {
        init: Option<Box<Stmt>>,
        cond: Option<Expr>,
        post: Option<Box<Stmt>>,
        body: Block,
        pos: Pos,
    },
    ForRange {
        key: Option<String>,
        val: Option<String>,
        subject: Expr,
        body: Block,
        pos: Pos,
    },
    Return { exprs: Vec<Expr>, pos: Pos },
    Go { call: Expr, pos: Pos },
    Defer { call: Expr, pos: Pos },
    Select { cases: Vec<SelCase>, default: Option<(Block, Pos)>, pos: Pos },
    Break(Pos),
    Continue(Pos),
    Block(Block),
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub enum AssignOp {
    Set,
    Add,
    Sub,
}

pub struct SelCase {
    pub bind: Option<String>,
    pub ch: Expr,
    pub body: Block,
    pub pos: Pos,
}

#[derive(Clone)]
pub enum Expr {
    Nil(Pos),
    Bool(bool, Pos),
    Int(i64, Pos),
    Float(f64, Pos),
    Str(String, Pos),
    Ident(String, Pos),
    Selector(Box<Expr>, String, Pos),
    Index(Box<Expr>, Box<Expr>, Pos),
    Call { callee: Box<Expr>, args: Vec<Expr>, pos: Pos },
    Binary { op: BinOp, lhs: Box<Expr>, rhs: Box<Expr>, pos: Pos },
    Unary { op: UnOp, operand: Box<Expr>, pos: Pos },
    Recv(Box<Expr>, Pos),
    SliceLit { elem: Option<TypeRef>, elems: Vec<Expr>, pos: Pos },
    MapLit { entries: Vec<(Expr, Expr)>, pos: Pos },
    StructLit { ty: TypeRef, named: Vec<(String, Expr)>, positional: Vec<Expr>, pos: Pos },
    FuncLit(Rc<FnDef>, Pos),
    MakeChan(Pos),
    MakeMap(Option<Box<TypeRef>>, Pos),
    MakeSlice(Option<Box<Expr>>, Pos),
}

impl Expr {
    pub fn pos(&self) -> Pos {
        match self {
            Expr::Nil(p)
            | Expr::Bool(_, p)
            | Expr::Int(_, p)
            | Expr::Float(_, p)
            | Expr::Str(_, p)
            | Expr::Ident(_, p)
            | Expr::Selector(_, _, p)
            | Expr::Index(_, _, p)
            | Expr::Call { pos: p, .. }
            | Expr::Binary { pos: p, .. }
            | Expr::Unary { pos: p, .. }
            | Expr::Recv(_, p)
            | Expr::SliceLit { pos: p, .. }
            | Expr::MapLit { pos: p, .. }
            | Expr::StructLit { pos: p, .. }
            | Expr::FuncLit(_, p)
            | Expr::MakeChan(p)
            | Expr::MakeMap(_, p)
            | Expr::MakeSlice(_, p) => *p,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    And,
    Or,
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub enum UnOp {
    Not,
    Neg,
    Ref,
    Deref,
}

pub fn go_language() -> tree_sitter::Language {
    tree_sitter_go::language()
}

pub fn parse_source(src: &str) -> tree_sitter::Tree {
    let mut parser = tree_sitter::Parser::new();
    parser.set_language(&go_language()).expect("grammar load");
    parser.parse(src, None).expect("parse")
}

/// Lower a set of already-read files into a [`Program`]. Diagnostics cover
/// syntax errors and constructs outside the supported subset.
pub fn lower_files(files: Vec<SourceFile>) -> (Program, Vec<Diagnostic>) {
    let mut prog = Program {
        files: Vec::new(),
        funcs: HashMap::new(),
        methods: HashMap::new(),
        structs: HashMap::new(),
        globals: Vec::new(),
    };
    let mut diags = Vec::new();
    for file in files {
        let idx = prog.files.len();
        let tree = parse_source(&file.src);
        let mut lw = Lowerer { path: &file.path, src: &file.src, file_idx: idx, diags: &mut diags };
        lw.collect_syntax_errors(tree.root_node());
        lw.lower_file(tree.root_node(), &mut prog);
        prog.files.push(file);
    }
    diags.sort_by(|a, b| (&a.file, a.line, a.col).cmp(&(&b.file, b.line, b.col)));
    (prog, diags)
}

struct Lowerer<'a> {
    path: &'a str,
    src: &'a str,
    file_idx: usize,
    diags: &'a mut Vec<Diagnostic>,
}

struct FnCtx {
    qname: String,
    anon_count: u32,
}

impl<'a> Lowerer<'a> {
    fn text(&self, node: tree_sitter::Node) -> &'a str {
        &self.src[node.byte_range()]
    }

    fn diag(&mut self, node: tree_sitter::Node, message: impl Into<String>) {
        let pos = Pos::of(&node);
        self.diags.push(Diagnostic {
            file: self.path.to_string(),
            line: pos.line,
            col: pos.col,
            message: message.into(),
        });
    }

    fn unsupported(&mut self, node: tree_sitter::Node) {
        self.diag(node, format!("unsupported construct: {}", node.kind()));
    }

    fn collect_syntax_errors(&mut self, root: tree_sitter::Node) {
        if !root.has_error() {
            return;
        }
        let mut stack = vec![root];
        let mut reported = 0;
        while let Some(node) = stack.pop() {
            if node.is_error() || node.is_missing() {
                self.diag(node, "syntax error");
                reported += 1;
                if reported >= 5 {
                    return;
                }
                continue;
            }
            if node.has_error() {
                for i in (0..node.child_count()).rev() {
                    stack.push(node.child(i).unwrap());
                }
            }
        }
        if reported == 0 {
            self.diag(root, "syntax error");
        }
    }

    fn lower_file(&mut self, root: tree_sitter::Node, prog: &mut Program) {
        let mut cur = root.walk();
        for node in root.named_children(&mut cur) {
            match node.kind() {
                "package_clause" | "import_declaration" | "comment" => {}
                "function_declaration" => {
                    if let Some(def) = self.lower_func_decl(node, None) {
                        prog.funcs.insert(def.name.clone(), Rc::new(def));
                    }
                }
                "method_declaration" => {
                    if let Some(def) = self.lower_func_decl(node, Some(())) {
                        if let Some((_, recv_ty)) = def.recv.clone() {
                            let method = def.name.rsplit('.').next().unwrap_or("").to_string();
                            prog.methods.insert((recv_ty, method), Rc::new(def));
                        }
                    }
                }
                "type_declaration" => self.lower_type_decl(node, prog),
                "var_declaration" => {
                    let mut cur2 = node.walk();
                    for spec in node.named_children(&mut cur2) {
                        if spec.kind() != "var_spec" {
                            continue;
                        }
                        let (names, ty, exprs) = self.lower_var_spec(spec);
                        prog.globals.push(GlobalVar {
                            names,
                            ty,
                            exprs,
                            pos: Pos::of(&spec),
                            file_idx: self.file_idx,
                        });
                    }
                }
                "const_declaration" => {
                    // Treated like vars; iota is out of subset.
                    let mut cur2 = node.walk();
                    for spec in node.named_children(&mut cur2) {
                        if spec.kind() != "const_spec" {
                            continue;
                        }
                        let (names, ty, exprs) = self.lower_var_spec(spec);
                        prog.globals.push(GlobalVar {
                            names,
                            ty,
                            exprs,
                            pos: Pos::of(&spec),
                            file_idx: self.file_idx,
                        });
                    }
                }
                _ => self.unsupported(node),
            }
        }
    }

    fn lower_type_decl(&mut self, node: tree_sitter::Node, prog: &mut Program) {
        let mut cur = node.walk();
        for spec in node.named_children(&mut cur) {
            if spec.kind() != "type_spec" {
                continue;
            }
            let name = spec
                .child_by_field_name("name")
                .map(|n| self.text(n).to_string())
                .unwrap_or_default();
            match spec.child_by_field_name("type") {
                Some(ty) if ty.kind() == "struct_type" => {
                    let fields = self.struct_fields(ty);
                    prog.structs.insert(name.clone(), Rc::new(StructShape { name, fields }));
                }
                Some(other) => self.unsupported(other),
                None => self.unsupported(spec),
            }
        }
    }

    fn struct_fields(&mut self, struct_ty: tree_sitter::Node) -> Vec<String> {
        let mut fields = Vec::new();
        let Some(list) = struct_ty.named_child(0) else { return fields };
        let mut cur = list.walk();
        for fd in list.named_children(&mut cur) {
            if fd.kind() != "field_declaration" {
                continue;
            }
            let mut cur2 = fd.walk();
            for ch in fd.named_children(&mut cur2) {
                if ch.kind() == "field_identifier" {
                    fields.push(self.text(ch).to_string());
                }
            }
        }
        fields
    }

    fn lower_func_decl(&mut self, node: tree_sitter::Node, method: Option<()>) -> Option<FnDef> {
        let name_node = node.child_by_field_name("name")?;
        let base_name = self.text(name_node).to_string();
        let mut recv = None;
        let qname = if method.is_some() {
            let recv_list = node.child_by_field_name("receiver")?;
            let mut var = String::new();
            let mut ty = String::new();
            let mut cur = recv_list.walk();
            for pd in recv_list.named_children(&mut cur) {
                if pd.kind() != "parameter_declaration" {
                    continue;
                }
                if let Some(n) = pd.child_by_field_name("name") {
                    var = self.text(n).to_string();
                }
                if let Some(t) = pd.child_by_field_name("type") {
                    ty = self.text(t).trim_start_matches('*').to_string();
                }
            }
            recv = Some((var, ty.clone()));
            format!("{ty}.{base_name}")
        } else {
            base_name
        };
        let params = self.lower_params(node.child_by_field_name("parameters"));
        let mut ctx = FnCtx { qname: qname.clone(), anon_count: 0 };
        let body = match node.child_by_field_name("body") {
            Some(b) => self.lower_block(b, &mut ctx),
            None => Block::default(),
        };
        Some(FnDef {
            name: qname,
            file_idx: self.file_idx,
            decl_line: Pos::of(&node).line,
            recv,
            params,
            body,
        })
    }

    fn lower_params(&mut self, list: Option<tree_sitter::Node>) -> Vec<Param> {
        let mut params = Vec::new();
        let Some(list) = list else { return params };
        let mut cur = list.walk();
        for pd in list.named_children(&mut cur) {
            match pd.kind() {
                "parameter_declaration" => {
                    let mut cur2 = pd.walk();
                    for ch in pd.named_children(&mut cur2) {
                        if ch.kind() == "identifier" {
                            params.push(Param { name: self.text(ch).to_string(), variadic: false });
                        }
                    }
                }
                "variadic_parameter_declaration" => {
                    if let Some(n) = pd.child_by_field_name("name") {
                        params.push(Param { name: self.text(n).to_string(), variadic: true });
                    }
                }
                _ => {}
            }
        }
        params
    }

    fn lower_block(&mut self, node: tree_sitter::Node, ctx: &mut FnCtx) -> Block {
        let mut stmts = Vec::new();
        let mut cur = node.walk();
        for ch in node.named_children(&mut cur) {
            if ch.kind() == "comment" || ch.kind() == "empty_statement" {
                continue;
            }
            if let Some(s) = self.lower_stmt(ch, ctx) {
                stmts.push(s);
            }
        }
        Block { stmts }
    }

    fn lower_stmt(&mut self, node: tree_sitter::Node, ctx: &mut FnCtx) -> Option<Stmt> {
        let pos = Pos::of(&node);
        match node.kind() {
            "short_var_declaration" => {
                let names = self.ident_list(node.child_by_field_name("left"));
                let exprs = self.expr_list(node.child_by_field_name("right"), ctx);
                Some(Stmt::Short { names, exprs, pos })
            }
            "var_declaration" => {
                let mut cur = node.walk();
                let mut out = None;
                for spec in node.named_children(&mut cur) {
                    if spec.kind() != "var_spec" {
                        continue;
                    }
                    let (names, ty, exprs) = self.lower_var_spec_ctx(spec, ctx);
                    out = Some(Stmt::Var { names, ty, exprs, pos: Pos::of(&spec) });
                }
                out
            }
            "assignment_statement" => {
                let targets = self.expr_list(node.child_by_field_name("left"), ctx);
                let exprs = self.expr_list(node.child_by_field_name("right"), ctx);
                let op = match node.child_by_field_name("operator").map(|n| self.text(n)) {
                    Some("=") => AssignOp::Set,
                    Some("+=") => AssignOp::Add,
                    Some("-=") => AssignOp::Sub,
                    other => {
                        self.diag(node, format!("unsupported assignment operator {other:?}"));
                        AssignOp::Set
                    }
                };
                Some(Stmt::Assign { targets, op, exprs, pos })
            }
            "inc_statement" | "dec_statement" => {
                let target = self.lower_expr(node.named_child(0)?, ctx);
                let delta = if node.kind() == "inc_statement" { 1 } else { -1 };
                Some(Stmt::IncDec { target, delta, pos })
            }
            "expression_statement" => {
                Some(Stmt::Expr(self.lower_expr(node.named_child(0)?, ctx)))
            }
            "send_statement" => {
                let ch = self.lower_expr(node.child_by_field_name("channel")?, ctx);
                let value = self.lower_expr(node.child_by_field_name("value")?, ctx);
                Some(Stmt::Send { ch, value, pos })
            }
            "if_statement" => Some(self.lower_if(node, ctx)),
            "for_statement" => Some(self.lower_for(node, ctx)),
            "return_statement" => {
                let exprs = self.expr_list(node.named_child(0), ctx);
                Some(Stmt::Return { exprs, pos })
            }
            "go_statement" => {
                let call = self.lower_expr(node.named_child(0)?, ctx);
                Some(Stmt::Go { call, pos })
            }
            "defer_statement" => {
                let call = self.lower_expr(node.named_child(0)?, ctx);
                Some(Stmt::Defer { call, pos })
            }
            "select_statement" => Some(self.lower_select(node, ctx)),
            "break_statement" => Some(Stmt::Break(pos)),
            "continue_statement" => Some(Stmt::Continue(pos)),
            "block" => Some(Stmt::Block(self.lower_block(node, ctx))),
            _ => {
                self.unsupported(node);
                None
            }
        }
    }

    fn lower_if(&mut self, node: tree_sitter::Node, ctx: &mut FnCtx) -> Stmt {
        let pos = Pos::of(&node);
        let init = node
            .child_by_field_name("initializer")
            .and_then(|n| self.lower_stmt(n, ctx))
            .map(Box::new);
        let cond = match node.child_by_field_name("condition") {
            Some(c) => self.lower_expr(c, ctx),
            None => Expr::Bool(true, pos),
        };
        let then = match node.child_by_field_name("consequence") {
            Some(b) => self.lower_block(b, ctx),
            None => Block::default(),
        };
        let els = node.child_by_field_name("alternative").map(|alt| {
            Box::new(match alt.kind() {
                "if_statement" => self.lower_if(alt, ctx),
                _ => Stmt::Block(self.lower_block(alt, ctx)),
            })
        });
        Stmt::If { init, cond, then, els, pos }
    }

    fn lower_for(&mut self, node: tree_sitter::Node, ctx: &mut FnCtx) -> Stmt {
        let pos = Pos::of(&node);
        let body = match node.child_by_field_name("body") {
            Some(b) => self.lower_block(b, ctx),
            None => Block::default(),
        };
        let mut cur = node.walk();
        let header = node
            .named_children(&mut cur)
            .find(|n| matches!(n.kind(), "for_clause" | "range_clause" | "binary_expression"
                | "identifier" | "call_expression" | "unary_expression" | "true" | "false"
                | "selector_expression" | "parenthesized_expression"));
        match header {
            Some(h) if h.kind() == "for_clause" => {
                let init = h
                    .child_by_field_name("initializer")
                    .and_then(|n| self.lower_stmt(n, ctx))
                    .map(Box::new);
                let cond = h.child_by_field_name("condition").map(|n| self.lower_expr(n, ctx));
                let post = h
                    .child_by_field_name("update")
                    .and_then(|n| self.lower_stmt(n, ctx))
                    .map(Box::new);
                Stmt::ForClassic { init, cond, post, body, pos }
            }
            Some(h) if h.kind() == "range_clause" => {
                let names = self.ident_list(h.child_by_field_name("left"));
                let subject = match h.child_by_field_name("right") {
                    Some(r) => self.lower_expr(r, ctx),
                    None => Expr::Nil(pos),
                };
                let mut it = names.into_iter();
                let key = it.next().filter(|n| n != "_");
                let val = it.next().filter(|n| n != "_");
                Stmt::ForRange { key, val, subject, body, pos }
            }
            Some(h) => {
                let cond = self.lower_expr(h, ctx);
                Stmt::ForClassic { init: None, cond: Some(cond), post: None, body, pos }
            }
            None => Stmt::ForClassic { init: None, cond: None, post: None, body, pos },
        }
    }

    fn lower_select(&mut self, node: tree_sitter::Node, ctx: &mut FnCtx) -> Stmt {
        let pos = Pos::of(&node);
        let mut cases = Vec::new();
        let mut default = None;
        let mut cur = node.walk();
        for ch in node.named_children(&mut cur) {
            match ch.kind() {
                "communication_case" => {
                    let body = self.case_body(ch, ctx);
                    let mut cur2 = ch.walk();
                    let comm = ch
                        .named_children(&mut cur2)
                        .find(|n| matches!(n.kind(), "receive_statement" | "send_statement"));
                    match comm {
                        Some(c) if c.kind() == "receive_statement" => {
                            let bind = self
                                .ident_list(c.child_by_field_name("left"))
                                .into_iter()
                                .next()
                                .filter(|n| n != "_");
                            let recv_expr = c.child_by_field_name("right");
                            let ch_expr = match recv_expr {
                                Some(r) => match self.lower_expr(r, ctx) {
                                    Expr::Recv(inner, _) => *inner,
                                    other => other,
                                },
                                None => Expr::Nil(Pos::of(&ch)),
                            };
                            cases.push(SelCase { bind, ch: ch_expr, body, pos: Pos::of(&ch) });
                        }
                        _ => self.diag(ch, "unsupported select case (send cases are out of subset)"),
                    }
                }
                "default_case" => {
                    default = Some((self.case_body(ch, ctx), Pos::of(&ch)));
                }
                _ => {}
            }
        }
        Stmt::Select { cases, default, pos }
    }

    fn case_body(&mut self, case: tree_sitter::Node, ctx: &mut FnCtx) -> Block {
        let mut stmts = Vec::new();
        let mut cur = case.walk();
        for ch in case.named_children(&mut cur) {
            if matches!(ch.kind(), "receive_statement" | "send_statement" | "comment") {
                continue;
            }
            if let Some(s) = self.lower_stmt(ch, ctx) {
                stmts.push(s);
            }
        }
        Block { stmts }
    }

    fn lower_var_spec(&mut self, spec: tree_sitter::Node) -> (Vec<String>, Option<TypeRef>, Vec<Expr>) {
        let mut ctx = FnCtx { qname: "init".to_string(), anon_count: 0 };
        self.lower_var_spec_ctx(spec, &mut ctx)
    }

    fn lower_var_spec_ctx(
        &mut self,
        spec: tree_sitter::Node,
        ctx: &mut FnCtx,
    ) -> (Vec<String>, Option<TypeRef>, Vec<Expr>) {
        let mut names = Vec::new();
        let mut cur = spec.walk();
        for ch in spec.named_children(&mut cur) {
            if ch.kind() == "identifier" {
                names.push(self.text(ch).to_string());
            }
        }
        let ty = spec.child_by_field_name("type").map(|t| self.lower_type(t));
        let exprs = self.expr_list(spec.child_by_field_name("value"), ctx);
        (names, ty, exprs)
    }

    fn ident_list(&mut self, list: Option<tree_sitter::Node>) -> Vec<String> {
        let mut names = Vec::new();
        let Some(list) = list else { return names };
        if list.kind() == "identifier" {
            names.push(self.text(list).to_string());
            return names;
        }
        let mut cur = list.walk();
        for ch in list.named_children(&mut cur) {
            names.push(self.text(ch).to_string());
        }
        names
    }

    fn expr_list(&mut self, list: Option<tree_sitter::Node>, ctx: &mut FnCtx) -> Vec<Expr> {
        let mut exprs = Vec::new();
        let Some(list) = list else { return exprs };
        if list.kind() != "expression_list" {
            exprs.push(self.lower_expr(list, ctx));
            return exprs;
        }
        let mut cur = list.walk();
        for ch in list.named_children(&mut cur) {
            exprs.push(self.lower_expr(ch, ctx));
        }
        exprs
    }

    fn lower_type(&mut self, node: tree_sitter::Node) -> TypeRef {
        match node.kind() {
            "type_identifier" => TypeRef::Named(self.text(node).to_string()),
            "qualified_type" => {
                let pkg = node
                    .child_by_field_name("package")
                    .map(|n| self.text(n).to_string())
                    .unwrap_or_default();
                let name = node
                    .child_by_field_name("name")
                    .map(|n| self.text(n).to_string())
                    .unwrap_or_default();
                TypeRef::Qualified(pkg, name)
            }
            "slice_type" => {
                let elem = node
                    .child_by_field_name("element")
                    .map(|e| self.lower_type(e))
                    .unwrap_or(TypeRef::Other("?".into()));
                TypeRef::Slice(Box::new(elem))
            }
            "map_type" => {
                let k = node
                    .child_by_field_name("key")
                    .map(|e| self.lower_type(e))
                    .unwrap_or(TypeRef::Other("?".into()));
                let v = node
                    .child_by_field_name("value")
                    .map(|e| self.lower_type(e))
                    .unwrap_or(TypeRef::Other("?".into()));
                TypeRef::Map(Box::new(k), Box::new(v))
            }
            "channel_type" => {
                let v = node
                    .named_child(0)
                    .map(|e| self.lower_type(e))
                    .unwrap_or(TypeRef::Other("?".into()));
                TypeRef::Chan(Box::new(v))
            }
            "pointer_type" => {
                let inner = node
                    .named_child(0)
                    .map(|e| self.lower_type(e))
                    .unwrap_or(TypeRef::Other("?".into()));
                TypeRef::Ptr(Box::new(inner))
            }
            "struct_type" => {
                let fields = self.struct_fields(node);
                TypeRef::StructInline(Rc::new(StructShape { name: "struct".into(), fields }))
            }
            "function_type" => TypeRef::FuncType,
            other => TypeRef::Other(other.to_string()),
        }
    }

    fn lower_expr(&mut self, node: tree_sitter::Node, ctx: &mut FnCtx) -> Expr {
        let pos = Pos::of(&node);
        match node.kind() {
            "identifier" => {
                let name = self.text(node);
                match name {
                    "true" => Expr::Bool(true, pos),
                    "false" => Expr::Bool(false, pos),
                    "nil" => Expr::Nil(pos),
                    _ => Expr::Ident(name.to_string(), pos),
                }
            }
            "true" => Expr::Bool(true, pos),
            "false" => Expr::Bool(false, pos),
            "nil" => Expr::Nil(pos),
            "int_literal" => {
                let raw: String = self.text(node).chars().filter(|c| *c != '_').collect();
                let v = if let Some(hex) = raw.strip_prefix("0x").or_else(|| raw.strip_prefix("0X"))
                {
                    i64::from_str_radix(hex, 16).unwrap_or(0)
                } else {
                    raw.parse().unwrap_or(0)
                };
                Expr::Int(v, pos)
            }
            "float_literal" => Expr::Float(self.text(node).parse().unwrap_or(0.0), pos),
            "interpreted_string_literal" => {
                let raw = self.text(node);
                Expr::Str(unescape(&raw[1..raw.len().saturating_sub(1)]), pos)
            }
            "raw_string_literal" => {
                let raw = self.text(node);
                Expr::Str(raw[1..raw.len().saturating_sub(1)].to_string(), pos)
            }
            "rune_literal" => {
                let raw = self.text(node);
                let inner = unescape(&raw[1..raw.len().saturating_sub(1)]);
                Expr::Int(inner.chars().next().map(|c| c as i64).unwrap_or(0), pos)
            }
            "selector_expression" => {
                let operand = node.child_by_field_name("operand");
                let field = node.child_by_field_name("field");
                match (operand, field) {
                    (Some(o), Some(f)) => {
                        let base = self.lower_expr(o, ctx);
                        Expr::Selector(Box::new(base), self.text(f).to_string(), pos)
                    }
                    _ => {
                        self.unsupported(node);
                        Expr::Nil(pos)
                    }
                }
            }
            "index_expression" => {
                let operand = self.lower_expr(node.child_by_field_name("operand").unwrap(), ctx);
                let index = self.lower_expr(node.child_by_field_name("index").unwrap(), ctx);
                Expr::Index(Box::new(operand), Box::new(index), pos)
            }
            "call_expression" => self.lower_call(node, ctx),
            "binary_expression" => {
                let op = match node.child_by_field_name("operator").map(|n| self.text(n)) {
                    Some("+") => BinOp::Add,
                    Some("-") => BinOp::Sub,
                    Some("*") => BinOp::Mul,
                    Some("/") => BinOp::Div,
                    Some("%") => BinOp::Rem,
                    Some("==") => BinOp::Eq,
                    Some("!=") => BinOp::Ne,
                    Some("<") => BinOp::Lt,
                    Some("<=") => BinOp::Le,
                    Some(">") => BinOp::Gt,
                    Some(">=") => BinOp::Ge,
                    Some("&&") => BinOp::And,
                    Some("||") => BinOp::Or,
                    other => {
                        self.diag(node, format!("unsupported operator {other:?}"));
                        BinOp::Eq
                    }
                };
                let lhs = self.lower_expr(node.child_by_field_name("left").unwrap(), ctx);
                let rhs = self.lower_expr(node.child_by_field_name("right").unwrap(), ctx);
                Expr::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs), pos }
            }
            "unary_expression" => {
                let operand = self.lower_expr(node.child_by_field_name("operand").unwrap(), ctx);
                match node.child_by_field_name("operator").map(|n| self.text(n)) {
                    Some("!") => Expr::Unary { op: UnOp::Not, operand: Box::new(operand), pos },
                    Some("-") => Expr::Unary { op: UnOp::Neg, operand: Box::new(operand), pos },
                    Some("&") => Expr::Unary { op: UnOp::Ref, operand: Box::new(operand), pos },
                    Some("*") => Expr::Unary { op: UnOp::Deref, operand: Box::new(operand), pos },
                    Some("<-") => Expr::Recv(Box::new(operand), pos),
                    Some("+") => operand,
                    other => {
                        self.diag(node, format!("unsupported unary operator {other:?}"));
                        Expr::Nil(pos)
                    }
                }
            }
            "parenthesized_expression" => match node.named_child(0) {
                Some(inner) => self.lower_expr(inner, ctx),
                None => Expr::Nil(pos),
            },
            "composite_literal" => self.lower_composite(node, ctx),
            "func_literal" => {
                ctx.anon_count += 1;
                let name = format!("{}$anon{}", ctx.qname, ctx.anon_count);
                let params = self.lower_params(node.child_by_field_name("parameters"));
                let mut inner = FnCtx { qname: name.clone(), anon_count: 0 };
                let body = match node.child_by_field_name("body") {
                    Some(b) => self.lower_block(b, &mut inner),
                    None => Block::default(),
                };
                Expr::FuncLit(
                    Rc::new(FnDef {
                        name,
                        file_idx: self.file_idx,
                        decl_line: pos.line,
                        recv: None,
                        params,
                        body,
                    }),
                    pos,
                )
            }
            _ => {
                self.unsupported(node);
                Expr::Nil(pos)
            }
        }
    }

    fn lower_call(&mut self, node: tree_sitter::Node, ctx: &mut FnCtx) -> Expr {
        let pos = Pos::of(&node);
        let callee_node = node.child_by_field_name("function").unwrap();
        let args_node = node.child_by_field_name("arguments");

        // make(...) takes a type as its first argument.
        if callee_node.kind() == "identifier" && self.text(callee_node) == "make" {
            if let Some(args) = args_node {
                let mut cur = args.walk();
                let named: Vec<tree_sitter::Node> = args.named_children(&mut cur).collect();
                if let Some(first) = named.first() {
                    match first.kind() {
                        "channel_type" => return Expr::MakeChan(pos),
                        "map_type" => {
                            let ty = self.lower_type(*first);
                            return Expr::MakeMap(Some(Box::new(ty)), pos);
                        }
                        "slice_type" => {
                            let len = named.get(1).map(|n| Box::new(self.lower_expr(*n, ctx)));
                            return Expr::MakeSlice(len, pos);
                        }
                        _ => {}
                    }
                }
            }
            self.diag(node, "unsupported make() form");
            return Expr::Nil(pos);
        }

        let callee = self.lower_expr(callee_node, ctx);
        let mut args = Vec::new();
        if let Some(list) = args_node {
            let mut cur = list.walk();
            for ch in list.named_children(&mut cur) {
                args.push(self.lower_expr(ch, ctx));
            }
        }
        Expr::Call { callee: Box::new(callee), args, pos }
    }

    fn lower_composite(&mut self, node: tree_sitter::Node, ctx: &mut FnCtx) -> Expr {
        let pos = Pos::of(&node);
        let ty = match node.child_by_field_name("type") {
            Some(t) => self.lower_type(t),
            None => TypeRef::Other("?".into()),
        };
        let body = node.child_by_field_name("body");
        match ty {
            TypeRef::Slice(elem) => {
                let elems = self.composite_elems(body, Some(&elem), ctx);
                Expr::SliceLit { elem: Some(*elem), elems, pos }
            }
            TypeRef::Map(_, _) => {
                let mut entries = Vec::new();
                if let Some(body) = body {
                    let mut cur = body.walk();
                    for el in body.named_children(&mut cur) {
                        if el.kind() != "keyed_element" {
                            continue;
                        }
                        let parts = keyed_parts(el);
                        if let (Some(k), Some(v)) = parts {
                            let key = self.lower_expr(unwrap_element(k), ctx);
                            let val = self.lower_expr(unwrap_element(v), ctx);
                            entries.push((key, val));
                        }
                    }
                }
                Expr::MapLit { entries, pos }
            }
            ty => self.lower_struct_lit(ty, body, pos, ctx),
        }
    }

    fn composite_elems(
        &mut self,
        body: Option<tree_sitter::Node>,
        elem_ty: Option<&TypeRef>,
        ctx: &mut FnCtx,
    ) -> Vec<Expr> {
        let mut elems = Vec::new();
        let Some(body) = body else { return elems };
        let mut cur = body.walk();
        for el in body.named_children(&mut cur) {
            if el.kind() == "comment" {
                continue;
            }
            let inner = unwrap_element(el);
            if inner.kind() == "literal_value" {
                // Untyped element literal; needs the slice's element type.
                match elem_ty {
                    Some(t) => {
                        let pos = Pos::of(&inner);
                        elems.push(self.lower_struct_lit(t.clone(), Some(inner), pos, ctx));
                    }
                    None => self.diag(inner, "untyped composite element"),
                }
            } else {
                elems.push(self.lower_expr(inner, ctx));
            }
        }
        elems
    }

    fn lower_struct_lit(
        &mut self,
        ty: TypeRef,
        body: Option<tree_sitter::Node>,
        pos: Pos,
        ctx: &mut FnCtx,
    ) -> Expr {
        let mut named = Vec::new();
        let mut positional = Vec::new();
        if let Some(body) = body {
            let mut cur = body.walk();
            for el in body.named_children(&mut cur) {
                match el.kind() {
                    "keyed_element" => {
                        if let (Some(k), Some(v)) = keyed_parts(el) {
                            let key = self.text(unwrap_element(k)).to_string();
                            let inner = unwrap_element(v);
                            let value = if inner.kind() == "literal_value" {
                                self.diag(inner, "untyped nested literal");
                                Expr::Nil(Pos::of(&inner))
                            } else {
                                self.lower_expr(inner, ctx)
                            };
                            named.push((key, value));
                        }
                    }
                    "literal_element" => {
                        positional.push(self.lower_expr(unwrap_element(el), ctx));
                    }
                    "comment" => {}
                    _ => {}
                }
            }
        }
        Expr::StructLit { ty, named, positional, pos }
    }

}

fn keyed_parts(el: tree_sitter::Node) -> (Option<tree_sitter::Node>, Option<tree_sitter::Node>) {
    let key = el.child_by_field_name("key").or_else(|| el.named_child(0));
    let value = el.child_by_field_name("value").or_else(|| el.named_child(1));
    (key, value)
}

fn unwrap_element(node: tree_sitter::Node) -> tree_sitter::Node {
    if node.kind() == "literal_element" {
        node.named_child(0).unwrap_or(node)
    } else {
        node
    }
}

fn unescape(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut chars = raw.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('t') => out.push('\t'),
            Some('r') => out.push('\r'),
            Some('"') => out.push('"'),
            Some('\'') => out.push('\''),
            Some('\\') => out.push('\\'),
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}
