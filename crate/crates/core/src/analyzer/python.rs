use tree_sitter::{Node, Parser};

use super::{
    node_text, span_of, walk, CallShape, ParseDiagnostic, ParsedFile, ProjectIndex, RawCall,
    RawFunction,
};
use crate::model::{CallKind, Param, Receiver, SemType};

const BUILTINS: &[&str] = &[
    "abs",
    "all",
    "any",
    "ascii",
    "bin",
    "bool",
    "bytearray",
    "bytes",
    "callable",
    "chr",
    "dict",
    "divmod",
    "enumerate",
    "filter",
    "float",
    "format",
    "frozenset",
    "getattr",
    "hasattr",
    "hash",
    "hex",
    "id",
    "input",
    "int",
    "isinstance",
    "issubclass",
    "iter",
    "len",
    "list",
    "map",
    "max",
    "memoryview",
    "min",
    "next",
    "object",
    "oct",
    "open",
    "ord",
    "pow",
    "print",
    "range",
    "repr",
    "reversed",
    "round",
    "set",
    "setattr",
    "slice",
    "sorted",
    "str",
    "sum",
    "super",
    "tuple",
    "type",
    "vars",
    "zip",
    "ValueError",
    "TypeError",
    "KeyError",
    "IndexError",
    "RuntimeError",
    "Exception",
];

pub(crate) fn module_name(rel_path: &str) -> String {
    let stem = rel_path.strip_suffix(".py").unwrap_or(rel_path);
    let stem = stem.strip_suffix("/__init__").unwrap_or(stem);
    stem.replace('/', ".")
}

/// Map an annotation to the closed type vocabulary.
pub(crate) fn sem_type(annotation: &str) -> SemType {
    let t: String = annotation.chars().filter(|c| !c.is_whitespace()).collect();
    let t = t.trim_matches(|c| c == '"' || c == '\'');
    match t {
        "int" => SemType::Int,
        "float" => SemType::Float,
        "bool" => SemType::Bool,
        "str" => SemType::Str,
        "bytes" | "bytearray" => SemType::Bytes,
        _ => {
            for prefix in ["list[", "List[", "typing.List[", "Sequence[", "tuple["] {
                if let Some(inner) = t.strip_prefix(prefix).and_then(|r| r.strip_suffix(']')) {
                    let inner = inner.strip_suffix(",...").unwrap_or(inner);
                    return SemType::Array(Box::new(sem_type(inner)));
                }
            }
            SemType::Unknown
        }
    }
}

fn literal_type(value: Node, src: &str) -> SemType {
    match value.kind() {
        "integer" => SemType::Int,
        "float" => SemType::Float,
        "true" | "false" => SemType::Bool,
        "string" => {
            let text = node_text(value, src);
            if text.starts_with(['b', 'B']) || text.starts_with("rb") || text.starts_with("Rb") {
                SemType::Bytes
            } else {
                SemType::Str
            }
        }
        "unary_operator" => value
            .child_by_field_name("argument")
            .map(|a| literal_type(a, src))
            .unwrap_or(SemType::Unknown),
        _ => SemType::Unknown,
    }
}

fn params_of(params: Node, src: &str) -> Vec<Param> {
    let mut out = Vec::new();
    let mut cursor = params.walk();
    for p in params.named_children(&mut cursor) {
        let (name, ty) = match p.kind() {
            "identifier" => (node_text(p, src).to_string(), SemType::Unknown),
            "typed_parameter" => {
                let mut c = p.walk();
                let name = p
                    .named_children(&mut c)
                    .find(|n| n.kind() == "identifier")
                    .map(|n| node_text(n, src).to_string());
                let ty = p
                    .child_by_field_name("type")
                    .map(|t| sem_type(node_text(t, src)))
                    .unwrap_or(SemType::Unknown);
                match name {
                    Some(n) => (n, ty),
                    // `*args: int` and friends
                    None => (node_text(p, src).to_string(), SemType::Unknown),
                }
            }
            "default_parameter" => {
                let name = p
                    .child_by_field_name("name")
                    .map(|n| node_text(n, src))
                    .unwrap_or("?");
                let ty = p
                    .child_by_field_name("value")
                    .map(|v| literal_type(v, src))
                    .unwrap_or(SemType::Unknown);
                (name.to_string(), ty)
            }
            "typed_default_parameter" => {
                let name = p
                    .child_by_field_name("name")
                    .map(|n| node_text(n, src))
                    .unwrap_or("?");
                let ty = p
                    .child_by_field_name("type")
                    .map(|t| sem_type(node_text(t, src)))
                    .unwrap_or(SemType::Unknown);
                (name.to_string(), ty)
            }
            "list_splat_pattern" | "dictionary_splat_pattern" => {
                (node_text(p, src).to_string(), SemType::Unknown)
            }
            _ => continue,
        };
        out.push(Param { name, ty });
    }
    out
}

fn dotted_chain(n: Node, src: &str) -> Option<Vec<String>> {
    match n.kind() {
        "identifier" => Some(vec![node_text(n, src).to_string()]),
        "attribute" => {
            let mut head = dotted_chain(n.child_by_field_name("object")?, src)?;
            head.push(node_text(n.child_by_field_name("attribute")?, src).to_string());
            Some(head)
        }
        _ => None,
    }
}

fn call_shape(func: Node, src: &str) -> CallShape {
    match func.kind() {
        "identifier" => CallShape::Bare(node_text(func, src).to_string()),
        "attribute" => {
            let method = func
                .child_by_field_name("attribute")
                .map(|a| node_text(a, src).to_string())
                .unwrap_or_default();
            match dotted_chain(func, src) {
                Some(chain) => CallShape::Dotted {
                    root: chain[0].clone(),
                    path: chain.join("."),
                    method,
                },
                None => CallShape::Method(method),
            }
        }
        _ => CallShape::Opaque(node_text(func, src).to_string()),
    }
}

fn collect_calls(body: Node, src: &str) -> Vec<RawCall> {
    let mut calls = Vec::new();
    walk(body, &mut |n| {
        if n.kind() == "call" {
            if let Some(f) = n.child_by_field_name("function") {
                calls.push(RawCall {
                    shape: call_shape(f, src),
                    span: span_of(n),
                });
            }
        }
    });
    calls
}

fn mentions(body: Node, src: &str, name: &str) -> bool {
    let mut found = false;
    walk(body, &mut |n| {
        if !found && n.kind() == "identifier" && node_text(n, src) == name {
            found = true;
        }
    });
    found
}

struct Walker<'s> {
    src: &'s str,
    out: ParsedFile,
}

impl<'s> Walker<'s> {
    fn visit(&mut self, n: Node, class_path: &mut Vec<String>) {
        let mut cursor = n.walk();
        for child in n.named_children(&mut cursor) {
            match child.kind() {
                "function_definition" => self.function(child, &[], class_path),
                "decorated_definition" => {
                    let mut c = child.walk();
                    let decorators: Vec<String> = child
                        .named_children(&mut c)
                        .filter(|d| d.kind() == "decorator")
                        .map(|d| {
                            node_text(d, self.src)
                                .trim_start_matches('@')
                                .trim()
                                .to_string()
                        })
                        .collect();
                    if let Some(def) = child.child_by_field_name("definition") {
                        match def.kind() {
                            "function_definition" => self.function(def, &decorators, class_path),
                            "class_definition" => self.class(def, class_path),
                            _ => {}
                        }
                    }
                }
                "class_definition" => self.class(child, class_path),
                _ => self.visit(child, class_path),
            }
        }
    }

    fn class(&mut self, n: Node, class_path: &mut Vec<String>) {
        let Some(name) = n.child_by_field_name("name") else {
            return;
        };
        let name = node_text(name, self.src).to_string();
        self.out.classes.push(name.clone());
        if let Some(body) = n.child_by_field_name("body") {
            class_path.push(name);
            self.visit(body, class_path);
            class_path.pop();
        }
    }

    fn function(&mut self, n: Node, decorators: &[String], class_path: &[String]) {
        let src = self.src;
        let (Some(name), Some(params), Some(body)) = (
            n.child_by_field_name("name"),
            n.child_by_field_name("parameters"),
            n.child_by_field_name("body"),
        ) else {
            return;
        };
        let name = node_text(name, src).to_string();
        let mut params = params_of(params, src);
        let receiver = if class_path.is_empty() {
            Receiver::Free
        } else if decorators.iter().any(|d| d == "staticmethod") {
            Receiver::Static
        } else if params.is_empty() {
            // a method without even `self` cannot be called on an instance
            Receiver::Static
        } else {
            let this = params.remove(0);
            Receiver::Instance {
                reads_state: mentions(body, src, &this.name),
            }
        };
        let ret = n
            .child_by_field_name("return_type")
            .map(|t| sem_type(node_text(t, src)))
            .unwrap_or(SemType::Unknown);
        let header = src[n.start_byte()..body.start_byte()]
            .trim_end()
            .to_string();

        // nested definitions count as declared names but get no record
        let mut nested = Vec::new();
        walk(body, &mut |c| {
            if c.kind() == "function_definition" || c.kind() == "class_definition" {
                if let Some(nn) = c.child_by_field_name("name") {
                    nested.push(node_text(nn, src).to_string());
                }
            }
        });
        self.out.extra_names.extend(nested);

        let qualname = if class_path.is_empty() {
            name.clone()
        } else {
            format!("{}.{name}", class_path.join("."))
        };
        self.out.functions.push(RawFunction {
            name,
            qualname,
            params,
            ret,
            header,
            body: node_text(n, src).to_string(),
            span: span_of(n),
            receiver,
            calls: collect_calls(body, src),
        });
    }

    fn imports(&mut self, root: Node) {
        let src = self.src;
        let mut found = Vec::new();
        walk(root, &mut |n| match n.kind() {
            "import_statement" => {
                let mut c = n.walk();
                for item in n.named_children(&mut c) {
                    match item.kind() {
                        "dotted_name" => {
                            let full = node_text(item, src);
                            let first = full.split('.').next().unwrap_or(full);
                            found.push((first.to_string(), first.to_string()));
                        }
                        "aliased_import" => {
                            if let (Some(name), Some(alias)) = (
                                item.child_by_field_name("name"),
                                item.child_by_field_name("alias"),
                            ) {
                                found.push((
                                    node_text(alias, src).to_string(),
                                    node_text(name, src).to_string(),
                                ));
                            }
                        }
                        _ => {}
                    }
                }
            }
            "import_from_statement" => {
                let Some(module) = n.child_by_field_name("module_name") else {
                    return;
                };
                let module = node_text(module, src).to_string();
                let mut c = n.walk();
                for item in n.children_by_field_name("name", &mut c) {
                    match item.kind() {
                        "dotted_name" => {
                            let name = node_text(item, src);
                            found.push((name.to_string(), format!("{module}.{name}")));
                        }
                        "aliased_import" => {
                            if let (Some(name), Some(alias)) = (
                                item.child_by_field_name("name"),
                                item.child_by_field_name("alias"),
                            ) {
                                found.push((
                                    node_text(alias, src).to_string(),
                                    format!("{module}.{}", node_text(name, src)),
                                ));
                            }
                        }
                        _ => {}
                    }
                }
            }
            _ => {}
        });
        self.out.imports = found;
    }
}

pub(crate) fn parse_file(rel_path: &str, text: &str) -> Result<ParsedFile, ParseDiagnostic> {
    let mut parser = Parser::new();
    parser
        .set_language(&tree_sitter_python::LANGUAGE.into())
        .expect("python grammar matches the tree-sitter runtime");
    let tree = parser.parse(text, None).ok_or_else(|| ParseDiagnostic {
        rel_path: rel_path.to_string(),
        line: 1,
        message: "parser produced no tree".into(),
    })?;
    let root = tree.root_node();
    if root.has_error() {
        return Err(ParseDiagnostic {
            rel_path: rel_path.to_string(),
            line: super::first_error_line(root),
            message: "syntax error; file skipped".into(),
        });
    }
    let mut w = Walker {
        src: text,
        out: ParsedFile {
            rel_path: rel_path.to_string(),
            module: module_name(rel_path),
            ..Default::default()
        },
    };
    w.imports(root);
    w.visit(root, &mut Vec::new());
    Ok(w.out)
}

fn is_project_origin(origin: &str, index: &ProjectIndex) -> bool {
    origin.starts_with('.')
        || index
            .module_roots
            .contains(origin.split('.').next().unwrap_or(origin))
}

pub(crate) fn classify(
    shape: &CallShape,
    file: &ParsedFile,
    index: &ProjectIndex,
) -> (String, CallKind) {
    match shape {
        CallShape::Bare(name) => {
            if index.user_names.contains(name) {
                return (name.clone(), CallKind::UserDefined);
            }
            if let Some(origin) = file.import_origin(name) {
                let kind = if is_project_origin(origin, index) {
                    CallKind::UserDefined
                } else {
                    CallKind::StandardLibrary
                };
                return (origin.to_string(), kind);
            }
            if BUILTINS.contains(&name.as_str()) {
                return (name.clone(), CallKind::StandardLibrary);
            }
            (name.clone(), CallKind::Unknown)
        }
        CallShape::Dotted { root, path, method } => {
            if root == "self" || root == "cls" {
                let kind = if index.user_names.contains(method) {
                    CallKind::UserDefined
                } else {
                    CallKind::Unknown
                };
                return (path.clone(), kind);
            }
            if let Some(origin) = file.import_origin(root) {
                let full = format!("{origin}{}", &path[root.len()..]);
                let kind = if is_project_origin(origin, index) {
                    CallKind::UserDefined
                } else {
                    CallKind::StandardLibrary
                };
                return (full, kind);
            }
            if index.user_classes.contains(root) || index.user_names.contains(method) {
                return (path.clone(), CallKind::UserDefined);
            }
            if BUILTINS.contains(&root.as_str()) {
                return (path.clone(), CallKind::StandardLibrary);
            }
            (format!(".{method}"), CallKind::StandardLibrary)
        }
        CallShape::Method(method) => {
            if index.user_names.contains(method) {
                (format!(".{method}"), CallKind::UserDefined)
            } else {
                (format!(".{method}"), CallKind::StandardLibrary)
            }
        }
        CallShape::New(name) | CallShape::Opaque(name) => (name.clone(), CallKind::Unknown),
    }
}
