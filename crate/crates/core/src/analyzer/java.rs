use tree_sitter::{Node, Parser};

use super::{
    node_text, span_of, walk, CallShape, ParseDiagnostic, ParsedFile, ProjectIndex, RawCall,
    RawFunction,
};
use crate::model::{CallKind, Param, Receiver, SemType};

pub(crate) fn sem_type(text: &str) -> SemType {
    let t: String = text.chars().filter(|c| !c.is_whitespace()).collect();
    match t.as_str() {
        "int" | "long" | "short" | "byte" | "Integer" | "Long" | "Short" => SemType::Int,
        "float" | "double" | "Float" | "Double" => SemType::Float,
        "boolean" | "Boolean" => SemType::Bool,
        "String" | "java.lang.String" => SemType::Str,
        "byte[]" => SemType::Bytes,
        _ => match t.strip_suffix("[]") {
            Some(inner) => SemType::Array(Box::new(sem_type(inner))),
            None => SemType::Unknown,
        },
    }
}

fn has_modifier(decl: Node, src: &str, word: &str) -> bool {
    let mut c = decl.walk();
    let found = decl
        .children(&mut c)
        .find(|n| n.kind() == "modifiers")
        .is_some_and(|m| node_text(m, src).split_whitespace().any(|w| w == word));
    found
}

fn params_of(params: Node, src: &str) -> Vec<Param> {
    let mut out = Vec::new();
    let mut c = params.walk();
    for p in params.named_children(&mut c) {
        match p.kind() {
            "formal_parameter" => {
                let name = p
                    .child_by_field_name("name")
                    .map(|n| node_text(n, src))
                    .unwrap_or("?");
                let mut ty = p
                    .child_by_field_name("type")
                    .map(|t| node_text(t, src).to_string())
                    .unwrap_or_default();
                if let Some(dims) = p.child_by_field_name("dimensions") {
                    ty.push_str(node_text(dims, src));
                }
                out.push(Param {
                    name: name.to_string(),
                    ty: sem_type(&ty),
                });
            }
            "spread_parameter" => out.push(Param {
                name: node_text(p, src).to_string(),
                ty: SemType::Unknown,
            }),
            _ => {}
        }
    }
    out
}

fn dotted(n: Node, src: &str) -> Option<Vec<String>> {
    match n.kind() {
        "identifier" => Some(vec![node_text(n, src).to_string()]),
        "field_access" => {
            let mut head = dotted(n.child_by_field_name("object")?, src)?;
            head.push(node_text(n.child_by_field_name("field")?, src).to_string());
            Some(head)
        }
        "scoped_identifier" => Some(node_text(n, src).split('.').map(str::to_string).collect()),
        _ => None,
    }
}

fn simple_type_name(text: &str) -> String {
    let base = text.split('<').next().unwrap_or(text).trim();
    base.rsplit('.').next().unwrap_or(base).to_string()
}

fn collect_calls(body: Node, src: &str) -> Vec<RawCall> {
    let mut calls = Vec::new();
    walk(body, &mut |n| {
        let shape = match n.kind() {
            "method_invocation" => {
                let Some(name) = n.child_by_field_name("name") else {
                    return;
                };
                let method = node_text(name, src).to_string();
                match n.child_by_field_name("object") {
                    None => CallShape::Bare(method),
                    Some(obj) if obj.kind() == "this" => CallShape::Bare(method),
                    Some(obj) if obj.kind() == "super" => {
                        CallShape::Opaque(format!("super.{method}"))
                    }
                    Some(obj) => match dotted(obj, src) {
                        Some(chain) => CallShape::Dotted {
                            root: chain[0].clone(),
                            path: format!("{}.{method}", chain.join(".")),
                            method,
                        },
                        None => CallShape::Method(method),
                    },
                }
            }
            "object_creation_expression" => {
                let Some(ty) = n.child_by_field_name("type") else {
                    return;
                };
                CallShape::New(simple_type_name(node_text(ty, src)))
            }
            _ => return,
        };
        calls.push(RawCall {
            shape,
            span: span_of(n),
        });
    });
    calls
}

struct Walker<'s> {
    src: &'s str,
    package: String,
    out: ParsedFile,
}

impl<'s> Walker<'s> {
    fn types_in(&mut self, n: Node, class_path: &mut Vec<String>) {
        let mut c = n.walk();
        for child in n.named_children(&mut c) {
            if matches!(
                child.kind(),
                "class_declaration"
                    | "interface_declaration"
                    | "enum_declaration"
                    | "record_declaration"
            ) {
                self.type_decl(child, class_path);
            }
        }
    }

    fn type_decl(&mut self, n: Node, class_path: &mut Vec<String>) {
        let src = self.src;
        let (Some(name), Some(body)) =
            (n.child_by_field_name("name"), n.child_by_field_name("body"))
        else {
            return;
        };
        let name = node_text(name, src).to_string();
        if class_path.is_empty() && self.out.module.is_empty() {
            self.out.module = if self.package.is_empty() {
                name.clone()
            } else {
                format!("{}.{name}", self.package)
            };
        }
        self.out.classes.push(name.clone());
        class_path.push(name);

        let mut fields = Vec::new();
        let mut c = body.walk();
        for member in body.named_children(&mut c) {
            if member.kind() == "field_declaration" && !has_modifier(member, src, "static") {
                let mut dc = member.walk();
                for d in member.children_by_field_name("declarator", &mut dc) {
                    if let Some(n) = d.child_by_field_name("name") {
                        fields.push(node_text(n, src).to_string());
                    }
                }
            }
        }
        // enum bodies keep their members one level down
        let mut members: Vec<Node> = Vec::new();
        let mut c = body.walk();
        for member in body.named_children(&mut c) {
            if member.kind() == "enum_body_declarations" {
                let mut ic = member.walk();
                members.extend(member.named_children(&mut ic));
            } else {
                members.push(member);
            }
        }
        for member in members {
            match member.kind() {
                "method_declaration" => self.method(member, class_path, &fields),
                "class_declaration"
                | "interface_declaration"
                | "enum_declaration"
                | "record_declaration" => self.type_decl(member, class_path),
                _ => {}
            }
        }
        class_path.pop();
    }

    fn method(&mut self, n: Node, class_path: &[String], fields: &[String]) {
        let src = self.src;
        let (Some(name), Some(params), Some(body)) = (
            n.child_by_field_name("name"),
            n.child_by_field_name("parameters"),
            n.child_by_field_name("body"),
        ) else {
            return;
        };
        let name = node_text(name, src).to_string();
        let mut ret = n
            .child_by_field_name("type")
            .map(|t| node_text(t, src).to_string())
            .unwrap_or_default();
        if let Some(dims) = n.child_by_field_name("dimensions") {
            ret.push_str(node_text(dims, src));
        }
        let receiver = if has_modifier(n, src, "static") {
            Receiver::Static
        } else {
            let mut reads = false;
            walk(body, &mut |c| {
                if c.kind() == "this"
                    || (c.kind() == "identifier" && fields.iter().any(|f| f == node_text(c, src)))
                {
                    reads = true;
                }
            });
            Receiver::Instance { reads_state: reads }
        };
        self.out.functions.push(RawFunction {
            qualname: format!("{}.{name}", class_path.join(".")),
            name,
            params: params_of(params, src),
            ret: sem_type(&ret),
            header: src[n.start_byte()..body.start_byte()]
                .trim_end()
                .to_string(),
            body: node_text(n, src).to_string(),
            span: span_of(n),
            receiver,
            calls: collect_calls(body, src),
        });
    }
}

pub(crate) fn parse_file(rel_path: &str, text: &str) -> Result<ParsedFile, ParseDiagnostic> {
    let mut parser = Parser::new();
    parser
        .set_language(&tree_sitter_java::LANGUAGE.into())
        .expect("java grammar matches the tree-sitter runtime");
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
    let mut package = String::new();
    let mut imports = Vec::new();
    let mut c = root.walk();
    for item in root.named_children(&mut c) {
        match item.kind() {
            "package_declaration" => {
                let mut ic = item.walk();
                let name = item
                    .named_children(&mut ic)
                    .find(|n| matches!(n.kind(), "scoped_identifier" | "identifier"));
                if let Some(name) = name {
                    package = node_text(name, text).to_string();
                }
            }
            "import_declaration" => {
                let full = node_text(item, text)
                    .trim_start_matches("import")
                    .trim_end_matches(';')
                    .trim()
                    .trim_start_matches("static ")
                    .trim()
                    .to_string();
                if let Some(last) = full.rsplit('.').next().filter(|l| *l != "*") {
                    imports.push((last.to_string(), full.clone()));
                }
            }
            _ => {}
        }
    }
    let mut w = Walker {
        src: text,
        package,
        out: ParsedFile {
            rel_path: rel_path.to_string(),
            imports,
            ..Default::default()
        },
    };
    w.types_in(root, &mut Vec::new());
    if w.out.module.is_empty() {
        w.out.module = w.package.clone();
    }
    Ok(w.out)
}

pub(crate) fn classify(
    shape: &CallShape,
    _file: &ParsedFile,
    index: &ProjectIndex,
) -> (String, CallKind) {
    match shape {
        CallShape::Bare(name) => {
            if index.user_names.contains(name) {
                (name.clone(), CallKind::UserDefined)
            } else {
                // an unqualified call that resolves nowhere in the project
                // must come from a supertype we cannot see
                (name.clone(), CallKind::Unknown)
            }
        }
        CallShape::Dotted { root, path, method } => {
            if index.user_classes.contains(root) {
                (path.clone(), CallKind::UserDefined)
            } else if root.starts_with(|c: char| c.is_ascii_uppercase()) {
                // a static call on a class outside the project, even when a
                // project method happens to share the name
                (path.clone(), CallKind::StandardLibrary)
            } else if index.user_names.contains(method) {
                (path.clone(), CallKind::UserDefined)
            } else {
                (format!(".{method}"), CallKind::StandardLibrary)
            }
        }
        CallShape::Method(method) => {
            let kind = if index.user_names.contains(method) {
                CallKind::UserDefined
            } else {
                CallKind::StandardLibrary
            };
            (format!(".{method}"), kind)
        }
        CallShape::New(ty) => {
            let kind = if index.user_classes.contains(ty) {
                CallKind::UserDefined
            } else {
                CallKind::StandardLibrary
            };
            (format!("new {ty}"), kind)
        }
        CallShape::Opaque(text) => (text.clone(), CallKind::Unknown),
    }
}
