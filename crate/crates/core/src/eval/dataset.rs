//! Dataset loading: JSON Lines question records plus a table store.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use crate::table::{parse_table, Table, TableRecord};

use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    #[default]
    Qa,
    Fv,
}

impl Task {
    pub fn as_str(&self) -> &'static str {
        match self {
            Task::Qa => "qa",
            Task::Fv => "fv",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Gold {
    Answers(Vec<String>),
    Label(bool),
}

#[derive(Debug, Clone)]
pub struct Example {
    pub id: String,
    pub table_id: String,
    pub question: String,
    pub task: Task,
    pub gold: Gold,
}

/// Tables keyed by id.
#[derive(Debug, Clone, Default)]
pub struct TableStore {
    tables: BTreeMap<String, Table>,
}

impl TableStore {
    pub fn get(&self, id: &str) -> Option<&Table> {
        self.tables.get(id)
    }

    pub fn insert(&mut self, table: Table) {
        self.tables.insert(table.source_id.clone(), table);
    }

    pub fn len(&self) -> usize {
        self.tables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }
}

/// Load a JSONL file of table records.
pub fn load_tables(path: &Path) -> Result<TableStore, EvalError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))?;
    let mut store = TableStore::default();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: TableRecord = serde_json::from_str(line).map_err(|e| {
            EvalError::MalformedRecord(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        let table = parse_table(&record).map_err(|e| {
            EvalError::MalformedRecord(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        store.insert(table);
    }
    Ok(store)
}

#[derive(Debug, Deserialize)]
struct QuestionRecordRaw {
    id: String,
    table_id: String,
    question: String,
    #[serde(default)]
    answers: Option<Vec<String>>,
    #[serde(default)]
    label: Option<bool>,
}

/// Load question records and the table store they reference. Every
/// example's table id must resolve.
pub fn load_dataset(
    questions_path: &Path,
    tables_path: &Path,
    task: Task,
) -> Result<(Vec<Example>, TableStore), EvalError> {
    let store = load_tables(tables_path)?;
    let text = std::fs::read_to_string(questions_path)
        .map_err(|e| EvalError::Io(format!("{}: {e}", questions_path.display())))?;
    let mut examples = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw: QuestionRecordRaw = serde_json::from_str(line).map_err(|e| {
            EvalError::MalformedRecord(format!("{}:{}: {e}", questions_path.display(), lineno + 1))
        })?;
        let gold = match task {
            Task::Qa => match raw.answers {
                Some(answers) if !answers.is_empty() => Gold::Answers(answers),
                _ => {
                    return Err(EvalError::MalformedRecord(format!(
                        "{}: qa example {} has no answers",
                        questions_path.display(),
                        raw.id
                    )))
                }
            },
            Task::Fv => match raw.label {
                Some(label) => Gold::Label(label),
                None => {
                    return Err(EvalError::MalformedRecord(format!(
                        "{}: fv example {} has no label",
                        questions_path.display(),
                        raw.id
                    )))
                }
            },
        };
        if store.get(&raw.table_id).is_none() {
            return Err(EvalError::MissingTable(raw.table_id));
        }
        examples.push(Example {
            id: raw.id,
            table_id: raw.table_id,
            question: raw.question,
            task,
            gold,
        });
    }
    log::info!(
        "loaded {} examples over {} tables from {}",
        examples.len(),
        store.len(),
        questions_path.display()
    );
    Ok((examples, store))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_file(dir: &tempfile::TempDir, name: &str, content: &str) -> std::path::PathBuf {
        let path = dir.path().join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        path
    }

    const TABLES: &str = r#"{"id":"t1","title":"T","header":["A","B"],"rows":[["x","y"]]}
{"id":"t2","header":["C"],"rows":[["z"]]}
"#;

    #[test]
    fn loads_examples_and_tables() {
        let dir = tempfile::tempdir().unwrap();
        let tables = write_file(&dir, "tables.jsonl", TABLES);
        let questions = write_file(
            &dir,
            "qa.jsonl",
            r#"{"id":"q1","table_id":"t1","question":"?","answers":["x"]}
{"id":"q2","table_id":"t2","question":"?","answers":["z"]}
{"id":"q3","table_id":"t1","question":"?","answers":["y"]}
"#,
        );
        let (examples, store) = load_dataset(&questions, &tables, Task::Qa).unwrap();
        assert_eq!(examples.len(), 3);
        assert_eq!(store.len(), 2);
    }

    #[test]
    fn unknown_table_id_errors() {
        let dir = tempfile::tempdir().unwrap();
        let tables = write_file(&dir, "tables.jsonl", TABLES);
        let questions = write_file(
            &dir,
            "qa.jsonl",
            r#"{"id":"q1","table_id":"ghost","question":"?","answers":["x"]}"#,
        );
        let err = load_dataset(&questions, &tables, Task::Qa).unwrap_err();
        assert!(matches!(err, EvalError::MissingTable(ref t) if t == "ghost"));
    }

    #[test]
    fn qa_without_answers_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let tables = write_file(&dir, "tables.jsonl", TABLES);
        let questions = write_file(
            &dir,
            "qa.jsonl",
            r#"{"id":"q1","table_id":"t1","question":"?"}"#,
        );
        assert!(matches!(
            load_dataset(&questions, &tables, Task::Qa),
            Err(EvalError::MalformedRecord(_))
        ));
    }

    #[test]
    fn fv_labels_load() {
        let dir = tempfile::tempdir().unwrap();
        let tables = write_file(&dir, "tables.jsonl", TABLES);
        let questions = write_file(
            &dir,
            "fv.jsonl",
            r#"{"id":"f1","table_id":"t1","question":"claim","label":true}"#,
        );
        let (examples, _) = load_dataset(&questions, &tables, Task::Fv).unwrap();
        assert_eq!(examples[0].gold, Gold::Label(true));
    }
}
