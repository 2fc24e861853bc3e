"""Node references and address-space trees.

Address spaces are small immutable trees of Object and Variable nodes.
Only Variables carry a data type and produce sampled values.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterator

from infoengine.errors import InvalidValue, MissingField, UnresolvableNode


class RefKind(str, Enum):
    NODE_ID = "nodeId"
    BROWSE_PATH = "browsePath"


class NodeClass(str, Enum):
    OBJECT = "Object"
    VARIABLE = "Variable"


class DataType(str, Enum):
    FLOAT64 = "float64"
    INT64 = "int64"
    BOOLEAN = "boolean"
    STRING = "string"
    BYTES = "bytes"

    @property
    def numeric(self) -> bool:
        return self in (DataType.FLOAT64, DataType.INT64)


@dataclass(frozen=True, order=True)
class NodeRef:
    ns: int
    id: str
    kind: RefKind = RefKind.NODE_ID

    def __post_init__(self):
        if not isinstance(self.ns, int) or isinstance(self.ns, bool) or self.ns < 0:
            raise InvalidValue("ns", "must be a non-negative integer")
        if not isinstance(self.id, str) or not self.id:
            raise InvalidValue("id", "must be a non-empty string")
        object.__setattr__(self, "kind", RefKind(self.kind))

    @property
    def canonical(self) -> str:
        tag = "s" if self.kind is RefKind.NODE_ID else "bp"
        return f"ns={self.ns};{tag}={self.id}"

    def __str__(self) -> str:
        return self.canonical

    @classmethod
    def parse(cls, text: str) -> "NodeRef":
        """Inverse of ``canonical``: ``ns=2;s=Motor.Temp`` or ``ns=0;bp=Objects/Pump``."""
        try:
            ns_part, rest = text.split(";", 1)
            tag, ident = rest.split("=", 1)
            if not ns_part.startswith("ns="):
                raise ValueError
            ns = int(ns_part[3:])
        except ValueError:
            raise InvalidValue("nodeRef", f"not a canonical node reference: {text!r}") from None
        kinds = {"s": RefKind.NODE_ID, "bp": RefKind.BROWSE_PATH}
        if tag not in kinds:
            raise InvalidValue("nodeRef", f"unknown reference tag {tag!r}")
        return cls(ns, ident, kinds[tag])

    def to_json(self) -> dict:
        return {"ns": self.ns, "id": self.id, "kind": self.kind.value}

    @classmethod
    def from_json(cls, obj: Any, path: str = "nodeRef") -> "NodeRef":
        if not isinstance(obj, dict):
            raise InvalidValue(path, "must be an object")
        unknown = set(obj) - {"ns", "id", "kind"}
        if unknown:
            raise InvalidValue(path, f"unknown keys {sorted(unknown)}")
        for key in ("ns", "id"):
            if key not in obj:
                raise MissingField(f"{path}.{key}")
        ns, ident = obj["ns"], obj["id"]
        if not isinstance(ns, int) or isinstance(ns, bool) or ns < 0:
            raise InvalidValue(f"{path}.ns", "must be a non-negative integer")
        if not isinstance(ident, str) or not ident:
            raise InvalidValue(f"{path}.id", "must be a non-empty string")
        kind = obj.get("kind", "nodeId")
        if kind not in ("nodeId", "browsePath"):
            raise InvalidValue(f"{path}.kind", "must be nodeId or browsePath")
        return cls(ns, ident, RefKind(kind))


@dataclass(frozen=True)
class AddressSpaceNode:
    node_ref: NodeRef
    browse_name: str
    node_class: NodeClass
    data_type: DataType | None = None
    children: tuple[AddressSpaceNode, ...] = ()
    display_name: str | None = None
    engineering_unit: str = ""
    tags: tuple[str, ...] = ()

    def __post_init__(self):
        if self.node_class is NodeClass.VARIABLE and self.data_type is None:
            raise InvalidValue(self.browse_name, "Variable nodes need a dataType")
        names = [c.browse_name for c in self.children]
        if len(names) != len(set(names)):
            raise InvalidValue(self.browse_name, "duplicate browseName among children")

    @property
    def is_variable(self) -> bool:
        return self.node_class is NodeClass.VARIABLE

    def sorted_children(self) -> list[AddressSpaceNode]:
        return sorted(self.children, key=lambda c: c.browse_name)

    def to_json(self) -> dict:
        out: dict[str, Any] = {
            "nodeRef": self.node_ref.to_json(),
            "browseName": self.browse_name,
            "nodeClass": self.node_class.value,
        }
        if self.data_type is not None:
            out["dataType"] = self.data_type.value
        if self.display_name is not None:
            out["displayName"] = self.display_name
        if self.engineering_unit:
            out["engineeringUnit"] = self.engineering_unit
        if self.tags:
            out["tags"] = list(self.tags)
        if self.children:
            out["children"] = [c.to_json() for c in self.children]
        return out

    @classmethod
    def from_json(cls, obj: dict, path: str = "addressSpace") -> "AddressSpaceNode":
        if not isinstance(obj, dict):
            raise InvalidValue(path, "must be an object")
        for key in ("nodeRef", "browseName", "nodeClass"):
            if key not in obj:
                raise MissingField(f"{path}.{key}")
        try:
            node_class = NodeClass(obj["nodeClass"])
        except ValueError:
            raise InvalidValue(f"{path}.nodeClass", "must be Object or Variable") from None
        data_type = None
        if obj.get("dataType") is not None:
            try:
                data_type = DataType(obj["dataType"])
            except ValueError:
                raise InvalidValue(f"{path}.dataType", "unknown data type") from None
        children = tuple(
            cls.from_json(c, f"{path}.children[{i}]")
            for i, c in enumerate(obj.get("children", []))
        )
        return cls(
            node_ref=NodeRef.from_json(obj["nodeRef"], f"{path}.nodeRef"),
            browse_name=obj["browseName"],
            node_class=node_class,
            data_type=data_type,
            children=children,
            display_name=obj.get("displayName"),
            engineering_unit=obj.get("engineeringUnit", ""),
            tags=tuple(obj.get("tags", ())),
        )


@dataclass
class AddressSpace:
    """An address-space tree with lookup by node id and by browse path."""

    root: AddressSpaceNode
    _by_id: dict[str, AddressSpaceNode] = field(init=False, repr=False)
    _by_path: dict[tuple[int, str], AddressSpaceNode] = field(init=False, repr=False)
    _paths: dict[str, str] = field(init=False, repr=False)

    def __post_init__(self):
        self._by_id = {}
        self._by_path = {}
        self._paths = {}
        for path, node in self._walk(self.root, self.root.browse_name):
            self._by_id[node.node_ref.canonical] = node
            self._by_path[(node.node_ref.ns, path)] = node
            self._paths[node.node_ref.canonical] = path

    @staticmethod
    def _walk(node: AddressSpaceNode, path: str) -> Iterator[tuple[str, AddressSpaceNode]]:
        yield path, node
        for child in node.children:
            yield from AddressSpace._walk(child, f"{path}/{child.browse_name}")

    def resolve(self, ref: NodeRef) -> AddressSpaceNode:
        if ref.kind is RefKind.NODE_ID:
            node = self._by_id.get(ref.canonical)
        else:
            node = self._by_path.get((ref.ns, ref.id))
        if node is None:
            raise UnresolvableNode(ref.canonical)
        return node

    def path_of(self, ref: NodeRef) -> str:
        """Browse path (browse names joined by ``/``) of a resolvable node."""
        return self._paths[self.resolve(ref).node_ref.canonical]

    def nodes(self) -> Iterator[AddressSpaceNode]:
        for _, node in self._walk(self.root, self.root.browse_name):
            yield node

    @classmethod
    def from_json(cls, obj: dict) -> "AddressSpace":
        return cls(AddressSpaceNode.from_json(obj))


def truncate(node: AddressSpaceNode, depth: int) -> AddressSpaceNode:
    """Copy of ``node`` keeping ``depth`` levels of children, sorted by browse name."""
    if depth <= 0:
        children: tuple[AddressSpaceNode, ...] = ()
    else:
        children = tuple(truncate(c, depth - 1) for c in node.sorted_children())
    return AddressSpaceNode(
        node.node_ref, node.browse_name, node.node_class, node.data_type,
        children, node.display_name, node.engineering_unit, node.tags,
    )
