use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use quick_xml::events::Event;
use quick_xml::Reader;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PostType {
    Question,
    Answer,
}

/// One post of a StackExchange-style dump, before any filtering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawPost {
    #[serde(rename = "id")]
    pub post_id: String,
    #[serde(rename = "type")]
    pub post_type: PostType,
    pub body: String,
    #[serde(default)]
    pub tags: Vec<String>,
    #[serde(default)]
    pub accepted_answer_id: Option<String>,
    #[serde(default)]
    pub parent_id: Option<String>,
}

pub fn parse_dump_file(path: &Path) -> Result<Vec<RawPost>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_dump(BufReader::new(file))
}

/// Parses an XML rows dump (one `<row .../>` per line) or its JSONL mirror.
///
/// The format is sniffed from the first non-blank line. Rows whose
/// `PostTypeId` is neither 1 nor 2 are dropped.
pub fn parse_dump<R: BufRead>(reader: R) -> Result<Vec<RawPost>> {
    let mut posts = Vec::new();
    let mut seen = HashSet::new();
    let mut jsonl: Option<bool> = None;

    for (n, line) in reader.lines().enumerate() {
        let line_no = n + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let is_jsonl = *jsonl.get_or_insert_with(|| trimmed.starts_with('{'));
        let post = if is_jsonl {
            parse_json_line(trimmed, line_no)?
        } else if trimmed.starts_with("<row") {
            parse_xml_row(trimmed, line_no)?
        } else {
            // xml declaration, <posts>, </posts>
            continue;
        };
        let Some(post) = post else { continue };
        if !seen.insert(post.post_id.clone()) {
            return Err(Error::Parse {
                line: line_no,
                message: format!("duplicate Id {}", post.post_id),
            });
        }
        posts.push(post);
    }
    Ok(posts)
}

fn parse_json_line(line: &str, line_no: usize) -> Result<Option<RawPost>> {
    let mut post: RawPost = serde_json::from_str(line).map_err(|e| Error::Parse {
        line: line_no,
        message: e.to_string(),
    })?;
    if post.post_id.is_empty() {
        return Err(missing("Id", line_no));
    }
    post.tags = post.tags.iter().map(|t| t.trim().to_owned()).collect();
    check_shape(&post, line_no)?;
    Ok(Some(post))
}

fn parse_xml_row(line: &str, line_no: usize) -> Result<Option<RawPost>> {
    let perr = |message: String| Error::Parse {
        line: line_no,
        message,
    };
    let mut reader = Reader::from_str(line);
    let event = reader.read_event().map_err(|e| perr(e.to_string()))?;
    let row = match event {
        Event::Empty(e) | Event::Start(e) if e.name().as_ref() == b"row" => e,
        _ => return Err(perr("expected a <row/> element".into())),
    };

    let mut id = None;
    let mut type_id = None;
    let mut body = None;
    let mut tags = None;
    let mut accepted = None;
    let mut parent = None;
    for attr in row.attributes() {
        let attr = attr.map_err(|e| perr(e.to_string()))?;
        let value = attr
            .unescape_value()
            .map_err(|e| perr(e.to_string()))?
            .into_owned();
        match attr.key.as_ref() {
            b"Id" => id = Some(value),
            b"PostTypeId" => type_id = Some(value),
            b"Body" => body = Some(value),
            b"Tags" => tags = Some(value),
            b"AcceptedAnswerId" => accepted = Some(value),
            b"ParentId" => parent = Some(value),
            _ => {}
        }
    }

    let id = id.filter(|s| !s.is_empty()).ok_or_else(|| missing("Id", line_no))?;
    let post_type = match type_id.as_deref() {
        Some("1") => PostType::Question,
        Some("2") => PostType::Answer,
        Some(_) => return Ok(None),
        None => return Err(missing("PostTypeId", line_no)),
    };
    let post = RawPost {
        post_id: id,
        post_type,
        body: body.unwrap_or_default(),
        tags: tags.as_deref().map(split_tags).unwrap_or_default(),
        accepted_answer_id: accepted.filter(|s| !s.is_empty()),
        parent_id: parent.filter(|s| !s.is_empty()),
    };
    if post.post_type == PostType::Question && tags.is_none() {
        return Err(missing("Tags", line_no));
    }
    check_shape(&post, line_no)?;
    Ok(Some(post))
}

fn check_shape(post: &RawPost, line_no: usize) -> Result<()> {
    if post.post_type == PostType::Answer && post.parent_id.is_none() {
        return Err(missing("ParentId", line_no));
    }
    Ok(())
}

fn missing(field: &str, line_no: usize) -> Error {
    Error::Parse {
        line: line_no,
        message: format!("missing {field} at line {line_no}"),
    }
}

/// Splits `<a><b>` (older dumps) or `|a|b|` (newer dumps) into tag names.
fn split_tags(raw: &str) -> Vec<String> {
    raw.split(['<', '>', '|'])
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = r#"<?xml version="1.0" encoding="utf-8"?>
<posts>
  <row Id="7" PostTypeId="1" AcceptedAnswerId="9" Body="&lt;p&gt;What is X?&lt;/p&gt;" Tags="&lt;probability&gt;&lt;variance&gt;" />
  <row Id="8" PostTypeId="1" Body="&lt;p&gt;Another.&lt;/p&gt;" Tags="|r|correlation|" />
  <row Id="9" PostTypeId="2" ParentId="7" Body="&lt;p&gt;It is Y.&lt;/p&gt;" />
  <row Id="10" PostTypeId="5" Body="wiki" />
</posts>
"#;

    #[test]
    fn parses_rows_in_file_order() {
        let posts = parse_dump(FIXTURE.as_bytes()).unwrap();
        assert_eq!(posts.len(), 3);
        assert_eq!(posts[0].post_id, "7");
        assert_eq!(posts[0].tags, vec!["probability", "variance"]);
        assert_eq!(posts[0].accepted_answer_id.as_deref(), Some("9"));
        assert_eq!(posts[0].body, "<p>What is X?</p>");
        assert_eq!(posts[1].tags, vec!["r", "correlation"]);
        assert_eq!(posts[2].post_type, PostType::Answer);
        assert_eq!(posts[2].parent_id.as_deref(), Some("7"));
    }

    #[test]
    fn answer_row_maps_parent() {
        let row = r#"<row Id="3" PostTypeId="2" ParentId="7" Body="x" />"#;
        let posts = parse_dump(row.as_bytes()).unwrap();
        assert_eq!(
            posts[0],
            RawPost {
                post_id: "3".into(),
                post_type: PostType::Answer,
                body: "x".into(),
                tags: vec![],
                accepted_answer_id: None,
                parent_id: Some("7".into()),
            }
        );
    }

    #[test]
    fn missing_id_names_line() {
        let dump = "<posts>\n<row Id=\"1\" PostTypeId=\"1\" Tags=\"&lt;a&gt;\" Body=\"\" />\n<row PostTypeId=\"2\" ParentId=\"1\" Body=\"\" />\n</posts>\n";
        let err = parse_dump(dump.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("missing Id at line 3"), "{err}");
    }

    #[test]
    fn duplicate_id_is_an_error() {
        let dump = "<row Id=\"1\" PostTypeId=\"2\" ParentId=\"5\" Body=\"\" />\n<row Id=\"1\" PostTypeId=\"2\" ParentId=\"5\" Body=\"\" />\n";
        let err = parse_dump(dump.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn malformed_row_is_reported() {
        let dump = "<row Id=\"1\" PostTypeId=\"2 ParentId=\"5\" />\n";
        assert!(matches!(
            parse_dump(dump.as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn jsonl_mirror() {
        let dump = concat!(
            r#"{"id":"1","type":"question","body":"<p>Q</p>","tags":["variance"],"accepted_answer_id":"2"}"#,
            "\n",
            r#"{"id":"2","type":"answer","body":"A","parent_id":"1"}"#,
            "\n"
        );
        let posts = parse_dump(dump.as_bytes()).unwrap();
        assert_eq!(posts.len(), 2);
        assert_eq!(posts[1].parent_id.as_deref(), Some("1"));
    }
}
