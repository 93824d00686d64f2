from .space import QuerySpace
